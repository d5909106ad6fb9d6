"""Command-line entry point: parse, features, windows, label-rule, label-imm, cascade, stats, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .cascade import CascadeRecord, Tier, run_cascade, tier_stats
from .config import PipelineConfig
from .errors import CascadeError, DegenerateFeature
from .features import EPOCH_H, NormStats, RunningMoments, extract_sequence
from .rules import Label, rule_label_sequence
from .synth import generate, load_scenario
from .tle import ArchiveStreams, Source, TleRecord, read_archives, write_archive
from .windowing import Window, assign_splits, make_windows, write_dataset

log = logging.getLogger("tlecascade")

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2


# ------------------------------------------------------------ helpers
def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    """Order-preserving map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _ingest(args, cfg: PipelineConfig) -> ArchiveStreams:
    tle = list(args.archives) or list(cfg.io.archives)
    supgp = list(getattr(args, "supgp", None) or ()) or list(cfg.io.supgp_archives)
    sources = [(p, Source.TLE) for p in tle] + [(p, Source.SUPGP) for p in supgp]
    if not sources:
        raise CascadeError("no input archives given")
    streams = read_archives(sources, args.jobs)
    log.info("ingested %d entries: %d parsed, %d skipped, %d duplicates, %d satellites",
             streams.total, streams.parsed, streams.skipped, streams.duplicates,
             len(streams.streams))
    return streams


def _histories(streams: ArchiveStreams) -> list[list[TleRecord]]:
    return [streams.streams[k] for k in sorted(streams.streams)]


class _Output:
    """Text sink: a file when a path is given, otherwise standard output."""

    def __init__(self, path: str | None):
        self.path = path

    def __enter__(self):
        self.fh = open(self.path, "w") if self.path else sys.stdout
        return self.fh

    def __exit__(self, *exc):
        if self.path:
            self.fh.close()
        else:
            self.fh.flush()


def _summary(obj: dict, to_stdout: bool) -> None:
    print(json.dumps(obj, sort_keys=True), file=sys.stdout if to_stdout else sys.stderr)


def record_to_dict(r: TleRecord) -> dict:
    return {
        "norad": r.norad_id, "epoch": r.epoch.isoformat(), "mean_motion": r.mean_motion,
        "eccentricity": r.eccentricity, "inclination": r.inclination, "raan": r.raan,
        "argp": r.argp, "mean_anomaly": r.mean_anomaly, "bstar": r.bstar, "n_dot": r.n_dot,
        "source": r.source.value,
    }


def corpus_norm_stats(sequences: Sequence[np.ndarray], T: int, stride: int) -> NormStats:
    """Stats over the rows of every window (epoch re-zeroed), i.e. what the model sees."""
    acc = RunningMoments()
    for seq in sequences:
        for w in make_windows(seq, 0, T, stride):
            acc.update(w.data)
    return acc.finalize()


def history_norm_stats(sequences: Sequence[np.ndarray]) -> NormStats:
    """Stats over whole histories with epoch re-zeroed per satellite."""
    acc = RunningMoments()
    for seq in sequences:
        if len(seq):
            x = seq.copy()
            x[:, EPOCH_H] -= x[0, EPOCH_H]
            acc.update(x)
    return acc.finalize()


# ------------------------------------------------------------ workers
def _features_job(args):
    history, clip = args
    return extract_sequence(history, clip)


def _rule_job(args):
    history, cfg = args
    labels, fired = rule_label_sequence(history, cfg.rules, return_rules=True)
    return [json.dumps({"norad": r.norad_id, "epoch": r.epoch.isoformat(),
                        "label": Label(int(lab)).name, "rule": int(k)})
            for r, lab, k in zip(history, labels, fired)]


def _imm_job(args):
    history, cfg = args
    filt = cfg.imm_filter()
    try:
        trace = filt.run(history)
    except CascadeError as exc:
        log.warning("satellite %d: filter failed (%s)", history[0].norad_id, exc)
        return [], False
    labels = trace.labels
    lines = []
    for t, r in enumerate(history):
        ll = [None if not np.isfinite(v) else float(v) for v in trace.loglik[t]]
        lines.append(json.dumps({
            "norad": r.norad_id, "epoch": r.epoch.isoformat(),
            "mu": [float(v) for v in trace.mu[t]], "label": Label(int(labels[t])).name,
            "source": r.source.value, "loglik": ll,
            "reacquired": bool(trace.reacquired[t]),
        }))
    return lines, True


def _cascade_job(args):
    history, cfg, tiers, sigma = args
    records = run_cascade(history, tiers, cfg.rules, cfg.imm_filter(), sigma, cfg.physics())
    degraded = Tier.IMM in tiers and records and records[0].imm_label is None
    return [r.to_json() for r in records], tier_stats(records), bool(degraded)


def _windows_job(args):
    history, cfg, label_tiers = args
    seq = extract_sequence(history, cfg.clip)
    labels = {}
    ok = True
    if "rule" in label_tiers:
        labels["rule"] = rule_label_sequence(history, cfg.rules)
    if "imm" in label_tiers:
        try:
            labels["imm"] = cfg.imm_filter().run(history).labels
        except CascadeError as exc:
            log.warning("satellite %d: filter failed (%s); imm labels zeroed",
                        history[0].norad_id, exc)
            labels["imm"] = np.zeros(len(history), dtype=np.uint8)
            ok = False
    return make_windows(seq, history[0].norad_id, cfg.windows.T, cfg.windows.stride, labels), ok


# ------------------------------------------------------------ commands
def cmd_parse(args, cfg) -> int:
    streams = _ingest(args, cfg)
    with _Output(args.out) as fh:
        for r in streams.records():
            fh.write(json.dumps(record_to_dict(r)) + "\n")
    _summary({"total": streams.total, "parsed": streams.parsed, "skipped": streams.skipped,
              "duplicates": streams.duplicates, "emitted": streams.emitted,
              "satellites": len(streams.streams)}, bool(args.out))
    return EXIT_OK


def cmd_features(args, cfg) -> int:
    streams = _ingest(args, cfg)
    hist = _histories(streams)
    seqs = _pmap(_features_job, [(h, cfg.clip) for h in hist], args.jobs)
    stats = corpus_norm_stats(seqs, cfg.windows.T, cfg.windows.stride)
    stats.save(args.out)
    if args.features_out:
        np.savez(args.features_out, **{str(h[0].norad_id): s for h, s in zip(hist, seqs)})
    _summary({"satellites": len(hist), "rows": int(sum(len(s) for s in seqs)),
              "stats": args.out}, True)
    return EXIT_OK


def cmd_windows(args, cfg) -> int:
    streams = _ingest(args, cfg)
    hist = _histories(streams)
    tiers = tuple(t for t in (args.labels.split(",") if args.labels else ()) if t)
    for t in tiers:
        if t not in ("rule", "imm"):
            raise CascadeError(f"unknown label tier {t!r}")
    results = _pmap(_windows_job, [(h, cfg, tiers) for h in hist], args.jobs)
    windows: list[Window] = [w for ws, _ in results for w in ws]
    if not windows:
        raise CascadeError(f"no satellite has the {cfg.windows.T} records one window needs")
    if args.stats:
        stats = NormStats.load(args.stats)
    else:
        acc = RunningMoments()
        for w in windows:
            acc.update(w.data)
        stats = acc.finalize()
        stats.save(args.out + ".stats.json")
    write_dataset(args.out, windows, stats, cfg.split.seed, tiers)
    split = assign_splits(windows, cfg.split.seed, cfg.split.fractions)
    with open(args.out + ".splits.jsonl", "w") as fh:
        for w in windows:
            fh.write(json.dumps({"norad": w.norad_id, "start": w.start,
                                 "split": split.assignment[w.key].value}) + "\n")
    fractions = {k.value: v for k, v in split.fractions().items()} if windows else {}
    _summary({"windows": len(windows), "satellites": len(hist), "splits": fractions}, True)
    return EXIT_OK if all(ok for _, ok in results) else EXIT_PARTIAL


def cmd_label_rule(args, cfg) -> int:
    streams = _ingest(args, cfg)
    out = _pmap(_rule_job, [(h, cfg) for h in _histories(streams)], args.jobs)
    with _Output(args.out) as fh:
        for lines in out:
            fh.writelines(line + "\n" for line in lines)
    return EXIT_OK


def cmd_label_imm(args, cfg) -> int:
    streams = _ingest(args, cfg)
    out = _pmap(_imm_job, [(h, cfg) for h in _histories(streams)], args.jobs)
    with _Output(args.out) as fh:
        for lines, _ in out:
            fh.writelines(line + "\n" for line in lines)
    return EXIT_OK if all(ok for _, ok in out) else EXIT_PARTIAL


def _parse_tiers(text: str) -> Tier:
    tiers = Tier.RULE
    for name in (t.strip().lower() for t in text.split(",") if t.strip()):
        try:
            tiers |= Tier[name.upper()]
        except KeyError:
            raise CascadeError(f"unknown tier {name!r}") from None
    return tiers


def cmd_cascade(args, cfg) -> int:
    streams = _ingest(args, cfg)
    hist = _histories(streams)
    tiers = _parse_tiers(args.tiers)
    sigma = None
    if Tier.SCORE in tiers:
        if args.stats:
            sigma = NormStats.load(args.stats).std
        else:
            seqs = _pmap(_features_job, [(h, cfg.clip) for h in hist], args.jobs)
            try:
                sigma = history_norm_stats(seqs).std
            except DegenerateFeature as exc:
                log.warning("innovation score disabled: %s", exc)
                tiers &= ~Tier.SCORE
    out = _pmap(_cascade_job, [(h, cfg, tiers, sigma) for h in hist], args.jobs)
    total = None
    with _Output(args.out) as fh:
        for lines, stats, _ in out:
            fh.writelines(line + "\n" for line in lines)
            total = stats if total is None else total.merge(stats)
    if total is not None:
        summary = {"summary": total.summary()}
        if args.out:
            _summary(summary, True)
        else:
            print(json.dumps(summary, sort_keys=True))
    return EXIT_PARTIAL if any(d for _, _, d in out) else EXIT_OK


def cmd_stats(args, cfg) -> int:
    records = []
    with open(args.jsonl) as fh:
        for line in fh:
            d = json.loads(line)
            if "summary" in d:
                continue
            records.append(CascadeRecord.from_dict(d))
    _summary({"summary": tier_stats(records).summary()}, True)
    return EXIT_OK


def cmd_synth(args, cfg) -> int:
    sc = load_scenario(args.scenario)
    hist = generate(sc, cfg.force)
    write_archive(args.out, hist.records)
    sidecar = args.labels or args.out + ".labels.jsonl"
    with open(sidecar, "w") as fh:
        for r, lab in zip(hist.records, hist.labels):
            fh.write(json.dumps({"norad": r.norad_id, "epoch": r.epoch.isoformat(),
                                 "label": Label(int(lab)).name}) + "\n")
    _summary({"records": len(hist.records), "reentered": hist.reentered,
              "archive": args.out, "labels": sidecar}, True)
    return EXIT_OK


# ------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's defaults from clobbering options given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="INI config file (default: $TLECASCADE_CONFIG)")
    common.add_argument("--jobs", type=int, help="worker processes (default 1)")
    common.add_argument("--log-level", help="logging level (default INFO)")

    p = argparse.ArgumentParser(prog="tlecascade", parents=[common],
                                description="TLE anomaly labeling cascade")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def archive_cmd(name, help_, fn):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("archives", nargs="*", help="TLE archive files")
        sp.add_argument("--supgp", nargs="*", default=[], help="archives tagged as supGP")
        sp.set_defaults(fn=fn)
        return sp

    sp = archive_cmd("parse", "parse archives to per-record JSONL", cmd_parse)
    sp.add_argument("--out")
    sp = archive_cmd("features", "extract features and corpus norm stats", cmd_features)
    sp.add_argument("--out", required=True, help="norm stats JSON")
    sp.add_argument("--features-out", help="optional .npz of raw per-satellite features")
    sp = archive_cmd("windows", "build the binary window dataset", cmd_windows)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stats", help="existing norm stats JSON")
    sp.add_argument("--labels", default="", help="comma list of label tiers: rule,imm")
    sp = archive_cmd("label-rule", "rule labels as JSONL", cmd_label_rule)
    sp.add_argument("--out")
    sp = archive_cmd("label-imm", "IMM-UKF labels as JSONL", cmd_label_imm)
    sp.add_argument("--out")
    sp = archive_cmd("cascade", "run all tiers, JSONL plus summary", cmd_cascade)
    sp.add_argument("--out")
    sp.add_argument("--tiers", default="rule,imm,score", help="comma list of rule,imm,score")
    sp.add_argument("--stats", help="norm stats JSON supplying the score sigma")

    sp = sub.add_parser("stats", parents=[common], help="recompute tier stats from cascade JSONL")
    sp.add_argument("jsonl")
    sp.set_defaults(fn=cmd_stats)
    sp = sub.add_parser("synth", parents=[common], help="generate a synthetic archive")
    sp.add_argument("scenario")
    sp.add_argument("--out", required=True)
    sp.add_argument("--labels", help="truth label sidecar (default: <out>.labels.jsonl)")
    sp.set_defaults(fn=cmd_synth)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_FATAL
    args.config = getattr(args, "config", None)
    args.jobs = getattr(args, "jobs", 1)
    level = str(getattr(args, "log_level", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        parser.print_usage(sys.stderr)
        return EXIT_FATAL
    try:
        cfg = PipelineConfig.load(args.config)
        log.info("resolved configuration:\n%s", cfg.dumps())
        return args.fn(args, cfg)
    except (CascadeError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
