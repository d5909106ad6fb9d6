from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import settings

from tlecascade.tle import Source, TleRecord

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# Widely published ISS element set with a valid checksum on both lines.
ISS_L1 = "1 25544U 98067A   08264.51782528 -.00002182  00000-0 -11606-4 0  2927"
ISS_L2 = "2 25544  51.6416 247.4627 0006703 130.5360 325.0288 15.72125391563537"

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def make_record(norad=40000, hours=0.0, mean_motion=15.0, ecc=0.001, inc=53.0, raan=10.0,
                argp=90.0, ma=0.0, bstar=1e-4, n_dot=0.0, source=Source.TLE) -> TleRecord:
    return TleRecord(norad, T0 + timedelta(hours=hours), mean_motion, ecc, inc, raan, argp, ma,
                     bstar, n_dot, source)


ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


def build_fleet(path, n_sats=4, n_obs=60, seed=0, supgp_every=0):
    """Write a mixed synthetic archive: varied orbits, B*, n_dot and events."""
    import numpy as np

    from tlecascade.synth import circular_scenario, drag_scale, generate, impulse
    from tlecascade.tle import write_archive

    rng = np.random.default_rng(seed)
    records = []
    for k in range(n_sats):
        events = []
        if k % 2 == 0:
            events.append(impulse(8.0 * rng.integers(n_obs // 6, n_obs - n_obs // 6) + 3.0,
                                  along_track=float(rng.choice([2.0, 30.0]))))
        if k % 3 == 2:
            events.append(drag_scale(8.0 * (n_obs // 2), 3.0))
        sources = None
        if supgp_every:
            sources = tuple(Source.SUPGP if j % supgp_every == 0 else Source.TLE
                            for j in range(n_obs))
        sc = circular_scenario(float(rng.uniform(420.0, 700.0)), n_obs, seed=seed * 100 + k,
                               norad_id=41000 + k, inclination_deg=float(rng.uniform(30, 98)),
                               bstar=float(rng.uniform(1e-5, 5e-4)),
                               n_dot=float(rng.uniform(0, 1e-5)), events=tuple(events),
                               sources=sources)
        records.extend(generate(sc).records)
    records.sort(key=lambda r: (r.epoch, r.norad_id))  # interleave satellites
    write_archive(path, records)
    return records
