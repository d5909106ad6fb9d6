from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from tlecascade.cli import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, main
from tlecascade.features import N_FEATURES, NormStats
from tlecascade.windowing import read_dataset

from conftest import build_fleet


@pytest.fixture(scope="module")
def archive(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = d / "fleet.tle"
    build_fleet(p, n_sats=3, n_obs=60, seed=1)
    return p


def _lines(path):
    return [json.loads(x) for x in path.read_text().splitlines() if x.strip()]


def test_parse(archive, tmp_path, capsys):
    out = tmp_path / "p.jsonl"
    assert main(["parse", str(archive), "--out", str(out)]) == EXIT_OK
    rows = _lines(out)
    assert len(rows) == 180
    assert set(rows[0]) >= {"norad", "epoch", "mean_motion", "bstar", "source"}
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["emitted"] == 180 and summary["skipped"] == 0


def test_parse_supgp_tag(archive, tmp_path):
    out = tmp_path / "p.jsonl"
    assert main(["parse", "--supgp", str(archive), "--out", str(out)]) == EXIT_OK
    assert {r["source"] for r in _lines(out)} == {"SUPGP"}


def test_features_and_windows(archive, tmp_path):
    stats = tmp_path / "stats.json"
    assert main(["features", str(archive), "--out", str(stats),
                 "--features-out", str(tmp_path / "f.npz")]) == EXIT_OK
    ns = NormStats.load(stats)
    assert ns.mean.shape == (N_FEATURES,)
    assert len(np.load(tmp_path / "f.npz").files) == 3

    ds_path = tmp_path / "ds.bin"
    code = main(["windows", str(archive), "--out", str(ds_path), "--stats", str(stats),
                 "--labels", "rule,imm"])
    assert code == EXIT_OK
    ds = read_dataset(ds_path)
    assert ds.shape == (3, 50, N_FEATURES)
    assert set(ds.labels) == {"rule", "imm"}
    assert ds.stats_digest == ns.digest()
    splits = _lines(tmp_path / "ds.bin.splits.jsonl")
    assert {s["split"] for s in splits} <= {"TRAIN", "VAL", "TEST"}


def test_windows_too_short(tmp_path):
    p = tmp_path / "short.tle"
    build_fleet(p, n_sats=1, n_obs=20)
    assert main(["windows", str(p), "--out", str(tmp_path / "d.bin")]) == EXIT_FATAL


def test_label_rule_and_imm(archive, tmp_path):
    assert main(["label-rule", str(archive), "--out", str(tmp_path / "r.jsonl")]) == EXIT_OK
    rows = _lines(tmp_path / "r.jsonl")
    assert len(rows) == 180 and {r["label"] for r in rows} <= {"NORMAL", "MANEUVER", "DECAY", "BREAKUP"}
    assert main(["label-imm", str(archive), "--out", str(tmp_path / "i.jsonl")]) == EXIT_OK
    rows = _lines(tmp_path / "i.jsonl")
    assert len(rows) == 180
    assert all(abs(sum(r["mu"]) - 1) < 1e-12 for r in rows)
    assert rows[0]["loglik"] == [None, None, None]
    assert {"label", "source", "reacquired"} <= set(rows[1])


def test_cascade_and_stats(archive, tmp_path, capsys):
    out = tmp_path / "c.jsonl"
    assert main(["cascade", str(archive), "--out", str(out)]) == EXIT_OK
    rows = _lines(out)
    assert len(rows) == 180
    assert set(rows[0]) == {"norad", "epoch", "rule", "imm", "mu", "source", "score"}
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["summary"]
    assert summary["timesteps"] == 180
    assert main(["stats", str(out)]) == EXIT_OK
    again = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["summary"]
    assert again == summary


def test_cascade_rule_only(archive, tmp_path):
    out = tmp_path / "c.jsonl"
    assert main(["cascade", str(archive), "--tiers", "rule", "--out", str(out)]) == EXIT_OK
    assert all(r["imm"] is None and r["score"] is None for r in _lines(out))


def test_filter_failure_is_partial(archive, tmp_path):
    cfg = tmp_path / "c.ini"
    # a floor above every orbit makes each prediction fail
    cfg.write_text("[force]\natmosphere = 900, 1e-14, 100\n")
    code = main(["--config", str(cfg), "cascade", str(archive), "--tiers", "rule,imm",
                 "--out", str(tmp_path / "c.jsonl")])
    assert code == EXIT_PARTIAL
    assert all(r["imm"] is None for r in _lines(tmp_path / "c.jsonl"))


def test_synth_command(tmp_path):
    sc = tmp_path / "s.ini"
    sc.write_text("[scenario]\nalt_km = 550\nn_obs = 12\nseed = 1\n"
                  "[event:b]\nkind = impulse\nat_hours = 40\ndv = 0, 1, 0\n")
    out = tmp_path / "s.tle"
    assert main(["synth", str(sc), "--out", str(out)]) == EXIT_OK
    labels = _lines(tmp_path / "s.tle.labels.jsonl")
    assert [r["label"] for r in labels].count("MANEUVER") == 1
    assert main(["parse", str(out), "--out", str(tmp_path / "p.jsonl")]) == EXIT_OK


@pytest.mark.parametrize("argv", [
    ["parse"],  # no archives
    ["parse", "/nonexistent/file.tle"],
    ["bogus"],
    ["--jobs", "0", "parse", "x"],
    ["cascade", "x", "--tiers", "rule,magic"],
])
def test_fatal_exit(argv, capsys):
    assert main(argv) == EXIT_FATAL


def test_bad_config_is_fatal(archive, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[windows]\nwidth = 3\n")
    assert main(["--config", str(cfg), "parse", str(archive)]) == EXIT_FATAL


def test_env_config(archive, tmp_path, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[windows]\nT = 20\nstride = 20\n")
    monkeypatch.setenv("TLECASCADE_CONFIG", str(cfg))
    assert main(["windows", str(archive), "--out", str(tmp_path / "d.bin")]) == EXIT_OK
    assert read_dataset(tmp_path / "d.bin").shape == (9, 20, N_FEATURES)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "tlecascade", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "cascade" in r.stdout
