"""Acceptance criteria 1-12, each reported as one PASS/FAIL line."""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

from tlecascade.cascade import Tier, TierStats, run_cascade, tier_stats
from tlecascade.cli import main
from tlecascade.dynamics import (
    MU_EARTH, RE_EQUATORIAL, ForceConfig, KeplerElements, eci_to_kepler, kepler_to_eci,
    propagate_batch, specific_energy,
)
from tlecascade.features import BSTAR, DT_HOURS, EPOCH_H, N_FEATURES, NormStats, clip_features
from tlecascade.imm import ImmFilter, adapt_to_altitude, with_source
from tlecascade.rules import Label, rule_fired, rule_label, rule_label_sequence
from tlecascade.synth import circular_scenario, drag_scale, generate, impulse, state_to_record
from tlecascade.tle import Source
from tlecascade.windowing import Split, assign_splits, make_windows, window_count

from conftest import build_fleet, make_record, record_criterion
from test_rules import FIXTURES, pair


# ------------------------------------------------------------ 1
def test_c01_conversion_fidelity():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        el = KeplerElements(rng.uniform(6.6e6, 4.5e7), rng.uniform(0.0, 0.9), rng.uniform(0, math.pi),
                            rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi),
                            rng.uniform(0, 2 * math.pi))
        x0 = kepler_to_eci(el).as_array()
        back = eci_to_kepler(x0)
        x1 = kepler_to_eci(back).as_array()
        err = max(np.linalg.norm(x1[:3] - x0[:3]) / np.linalg.norm(x0[:3]),
                  np.linalg.norm(x1[3:] - x0[3:]) / np.linalg.norm(x0[3:]),
                  abs(back.a - el.a) / el.a, abs(back.e - el.e) / max(el.e, 1e-300) if el.e > 1e-6 else 0.0)
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 5.0
    record_criterion(1, ok, f"max relative error {worst:.2e} (< 1e-9), {elapsed:.2f} s (< 5 s)")
    assert ok


# ------------------------------------------------------------ 2
def test_c02_integrator_quality():
    cfg = ForceConfig(use_j2=False, use_drag=False)
    a = RE_EQUATORIAL + 550e3
    x0 = kepler_to_eci(KeplerElements(a, 0.0, math.radians(53), 0.0, 0.0, 0.0)).as_array()
    period = 2 * math.pi * math.sqrt(a**3 / MU_EARTH)
    n_steps = math.ceil(period / 60.0)
    h = period / n_steps  # <= 60 s, lands exactly on one period
    x = x0.copy()
    e0 = specific_energy(x0)
    kepler = []
    for _ in range(n_steps):
        x = propagate_batch(x, h, cfg, 0.0, max_step=60.0)
        ai = eci_to_kepler(x).a
        n_rad = math.sqrt(MU_EARTH / ai**3)
        kepler.append(n_rad**2 * ai**3)
    drift = abs(specific_energy(x) / e0 - 1.0)
    closure = float(np.linalg.norm(x[:3] - x0[:3]))
    k = np.asarray(kepler)
    kep_spread = float(np.max(np.abs(k / MU_EARTH - 1.0)))
    ok = drift < 1e-9 and closure < 1.0 and kep_spread < 1e-9
    record_criterion(2, ok, f"energy drift {drift:.2e} (< 1e-9), closure {closure:.2f} m (< 1 m), "
                            f"n^2 a^3 spread {kep_spread:.1e} (< 1e-9); {n_steps} steps of {h:.2f} s")
    assert ok


# ------------------------------------------------------------ 3
def test_c03_rule_exactness():
    failures = []
    for name, kw, rule, label in FIXTURES:
        prev, cur = pair(**kw)
        if rule_fired(prev, cur) != rule or rule_label(prev, cur) is not label:
            failures.append(name)
    priority = rule_label(*pair(alt0=420.0, alt1=240.0))
    ok = len(FIXTURES) >= 14 and not failures and priority is Label.BREAKUP
    record_criterion(3, ok, f"{len(FIXTURES)} fixture pairs, {len(failures)} mismatches, "
                            f"420->240 km labels {priority.name}")
    assert ok


# ------------------------------------------------------------ 4
def test_c04_rule_throughput():
    n = 200_000
    rng = np.random.default_rng(4)
    n_motion = 15.0 + rng.normal(0, 0.01, n)
    recs = [make_record(hours=float(k), mean_motion=float(n_motion[k]), bstar=1e-4 * (1 + k % 3))
            for k in range(n)]
    best = math.inf
    for _ in range(3):
        t0 = time.perf_counter()
        rule_label_sequence(recs)
        best = min(best, time.perf_counter() - t0)
    rate = (n - 1) / best
    ok = rate >= 1e5
    record_criterion(4, ok, f"{rate:.3g} pairs/s from parsed records, single thread (>= 1e5)")
    assert ok


# ------------------------------------------------------------ 5
def test_c05_imm_posterior_hygiene():
    rng = np.random.default_rng(5)
    filt = ImmFilter()
    steps = 0
    worst_mu = worst_row = 0.0
    bad_cov = 0
    sat = 0
    while steps < 10_000:
        n_obs = 101
        alt = float(rng.uniform(300.0, 900.0))
        sched = tuple(rng.uniform(0.5, 12.0, n_obs - 1))
        sources = tuple(Source.SUPGP if u < 0.3 else Source.TLE for u in rng.uniform(size=n_obs))
        span = float(sum(sched))
        events = (impulse(float(rng.uniform(0, span)), along_track=float(rng.normal(0, 2.0)),
                          radial=float(rng.normal(0, 0.5))),)
        sc = circular_scenario(alt, 2, seed=sat, inclination_deg=float(rng.uniform(0, 180)),
                               raan_deg=float(rng.uniform(0, 360)),
                               mean_anomaly_deg=float(rng.uniform(0, 360)),
                               bstar=float(rng.uniform(0, 5e-4)))
        sc = type(sc)(sc.elements, sched, sat, sc.bstar, 0.0, sc.start, sources, sc.noise, events, sat)
        recs = generate(sc).records
        state = filt.init_state(recs[0])
        for rec in recs[1:]:
            state, _ = filt.step(state, rec)
            steps += 1
            worst_mu = max(worst_mu, abs(state.mu.sum() - 1.0))
            if np.any(state.mu < 0):
                worst_mu = math.inf
            for P in state.covs:
                d = np.sqrt(np.diag(P))
                try:
                    np.linalg.cholesky(P / np.outer(d, d))
                except np.linalg.LinAlgError:
                    bad_cov += 1
                if not np.array_equal(P, P.T):
                    bad_cov += 1
            _, priors, T = adapt_to_altitude(float(np.linalg.norm(state.means[0][:3])) / 1e3 - 6371.0)
            worst_row = max(worst_row, float(np.max(np.abs(T.sum(axis=1) - 1.0))),
                            abs(priors.sum() - 1.0))
        sat += 1
    ok = worst_mu <= 1e-12 and worst_row <= 1e-12 and bad_cov == 0
    record_criterion(5, ok, f"{steps} steps over {sat} satellites: max |sum mu - 1| {worst_mu:.1e}, "
                            f"max |row sum - 1| {worst_row:.1e}, non-SPD covariances {bad_cov}")
    assert ok


# ------------------------------------------------------------ 6
def test_c06_maneuver_detection():
    t0 = time.perf_counter()
    filt = ImmFilter()
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        at = 8.0 * 19 + float(rng.uniform(0.0, 8.0))  # anywhere in the gap before observation 20
        sc = circular_scenario(550.0, 24, seed=seed, events=(impulse(at, along_track=1.0),))
        trace = filt.run(generate(sc).records)
        hits += bool(np.any(np.argmax(trace.mu[20:23], axis=1) == 1))
    elapsed = time.perf_counter() - t0
    ok = hits >= 90 and elapsed < 60.0
    record_criterion(6, ok, f"M1 argmax within 3 observations in {hits}/100 seeds (>= 90), "
                            f"{elapsed:.1f} s (< 60 s)")
    assert ok


# ------------------------------------------------------------ 7
def test_c07_decay_detection():
    filt = ImmFilter()
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(20_000 + seed)
        at = 8.0 * 9 + float(rng.uniform(0.0, 8.0))  # onset observed first at index 10
        sc = circular_scenario(320.0, 22, seed=seed, bstar=1e-3, events=(drag_scale(at, 5.0),))
        hist = generate(sc)
        assert not hist.reentered
        labels = filt.run(hist.records).labels
        hits += bool(np.any(labels[10:21] == Label.DECAY))
    ok = hits >= 90
    record_criterion(7, ok, f"DECAY within 10 observations of onset in {hits}/100 seeds (>= 90)")
    assert ok


# ------------------------------------------------------------ 8
def test_c08_cascade_gap():
    rng = np.random.default_rng(8)
    filt = ImmFilter()
    total = None
    for k in range(50):
        if k % 2 == 0:
            # 1-3 m/s changes the altitude by about 2-5 km, under the 10 km rule
            events = (impulse(float(rng.uniform(120.0, 360.0)),
                              along_track=float(rng.uniform(1.0, 3.0) * rng.choice([-1.0, 1.0]))),)
        else:
            events = (drag_scale(float(rng.uniform(80.0, 240.0)), float(rng.uniform(2.0, 5.0))),)
        sc = circular_scenario(float(rng.uniform(450.0, 700.0)), 60, seed=1000 + k,
                               norad_id=50000 + k, bstar=float(rng.uniform(5e-5, 5e-4)),
                               inclination_deg=float(rng.uniform(30.0, 98.0)),
                               raan_deg=float(rng.uniform(0.0, 360.0)),
                               mean_anomaly_deg=float(rng.uniform(0.0, 360.0)), events=events)
        s = tier_stats(run_cascade(generate(sc).records, Tier.RULE | Tier.IMM, imm=filt))
        total = s if total is None else total.merge(s)
    literal = TierStats(812, 34576, 0).summary()["ratio"]
    ratio = total.imm / total.rule if total.rule else math.inf
    ok = total.imm >= 5 * total.rule and literal == 42.6
    record_criterion(8, ok, f"IMM {total.imm} vs RULE {total.rule} non-normal ({ratio:.2f}x, need >= 5x); "
                            f"(812; 34,576) reports {literal}")
    assert ok


# ------------------------------------------------------------ 9
def test_c09_supgp_sharpening():
    rng = np.random.default_rng(9)
    filt = ImmFilter()
    wins = 0
    for case in range(100):
        dv = float(rng.uniform(0.5, 3.0) * rng.choice([-1.0, 1.0]))
        sc = circular_scenario(float(rng.uniform(450.0, 700.0)), 12, seed=case,
                               inclination_deg=float(rng.uniform(30.0, 98.0)),
                               mean_anomaly_deg=float(rng.uniform(0.0, 360.0)),
                               events=(impulse(84.0, along_track=dv),))
        hist = generate(sc)
        prior = filt.init_state(hist.records[0])
        for rec in hist.records[1:-1]:
            prior, _ = filt.step(prior, rec)
        # one noise-free observation of the post-maneuver state, tagged both ways
        obs = state_to_record(hist.truth_states[-1], hist.records[-1].epoch, sc, Source.TLE)
        mu_tle = filt.step(prior, with_source(obs, Source.TLE))[0].mu[1]
        mu_sup = filt.step(prior, with_source(obs, Source.SUPGP))[0].mu[1]
        wins += mu_sup > mu_tle
    ok = wins == 100
    record_criterion(9, ok, f"mu(M1) strictly higher under supGP in {wins}/100 cases (need 100)")
    assert ok


# ------------------------------------------------------------ 10
def test_c10_windowing_arithmetic():
    counts = {}
    rows_ok = True
    rng = np.random.default_rng(10)
    for n in (49, 50, 75, 100, 1000):
        seq = rng.normal(size=(n, N_FEATURES))
        seq[:, EPOCH_H] = 5e5 + np.cumsum(rng.uniform(1, 10, n))
        ws = make_windows(seq, 1)
        counts[n] = len(ws)
        rows_ok &= len(ws) == window_count(n)
        rows_ok &= all(w.data[0, EPOCH_H] == 0.0 and w.data[0, DT_HOURS] == 0.0 for w in ws)
    keys = [(sat, 25 * k) for sat in range(1000) for k in range(100)]
    a = assign_splits(keys, seed=2024)
    b = assign_splits(keys, seed=2024)
    fr = a.fractions()
    frac_ok = all(abs(fr[s] - t) <= 0.01 for s, t in
                  ((Split.TRAIN, 0.8), (Split.VAL, 0.1), (Split.TEST, 0.1)))
    same = [v.value for v in a.assignment.values()] == [v.value for v in b.assignment.values()]
    ok = (list(counts.values()) == [0, 1, 2, 3, 39] and rows_ok and frac_ok and same)
    record_criterion(10, ok, f"counts {list(counts.values())}; row 0 zeroed {rows_ok}; fractions "
                             f"{fr[Split.TRAIN]:.4f}/{fr[Split.VAL]:.4f}/{fr[Split.TEST]:.4f}; "
                             f"rerun identical {same}")
    assert ok


# ------------------------------------------------------------ 11
def test_c11_feature_clipping():
    x = np.zeros((2, N_FEATURES))
    x[:, DT_HOURS] = 300.0
    x[:, BSTAR] = [3.5, -3.5]
    c = clip_features(x)
    clip_ok = list(c[:, DT_HOURS]) == [240.0, 240.0] and list(c[:, BSTAR]) == [1.0, -1.0]
    rng = np.random.default_rng(11)
    scale = 10.0 ** rng.uniform(-6, 4, N_FEATURES)
    data = rng.normal(size=(10_000, N_FEATURES)) * scale + rng.normal(size=N_FEATURES) * scale
    stats = NormStats(data.mean(axis=0), data.std(axis=0))
    back = stats.denormalize(stats.normalize(data))
    err = float(np.max(np.abs(back - data) / (np.abs(data) + scale)))
    ok = clip_ok and err <= 1e-12
    record_criterion(11, ok, f"dt 300->{c[0, DT_HOURS]:g}, bstar +-3.5->{c[0, BSTAR]:g}/{c[1, BSTAR]:g}; "
                             f"normalization round trip {err:.1e} (<= 1e-12)")
    assert ok


# ------------------------------------------------------------ 12
def _pipeline(archive: Path, out: Path, jobs: int) -> dict[str, bytes]:
    out.mkdir()
    j = ["--jobs", str(jobs)]
    a = [str(archive)]
    runs = [
        ["parse", *a, "--out", str(out / "parse.jsonl")],
        ["features", *a, "--out", str(out / "stats.json")],
        ["windows", *a, "--out", str(out / "ds.bin"), "--stats", str(out / "stats.json"),
         "--labels", "rule,imm"],
        ["label-rule", *a, "--out", str(out / "rule.jsonl")],
        ["label-imm", *a, "--out", str(out / "imm.jsonl")],
        ["cascade", *a, "--out", str(out / "cascade.jsonl")],
    ]
    for argv in runs:
        assert main(j + argv) == 0, argv
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_c12_determinism(tmp_path):
    archive = tmp_path / "fleet.tle"
    build_fleet(archive, n_sats=8, n_obs=80, seed=12, supgp_every=4)
    one = _pipeline(archive, tmp_path / "j1", 1)
    eight = _pipeline(archive, tmp_path / "j8", 8)
    differ = [k for k in one if one[k] != eight.get(k)]
    expected = {"parse.jsonl", "stats.json", "ds.bin", "ds.bin.splits.jsonl", "rule.jsonl",
                "imm.jsonl", "cascade.jsonl"}
    ok = set(one) == set(eight) == expected and not differ
    record_criterion(12, ok, f"{len(one)} output files compared byte for byte, --jobs 1 vs 8; "
                             f"differing: {differ or 'none'}")
    assert ok
