"""Deterministic fixed-priority physical rule labeler over consecutive TLEs."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .errors import EpochOrder, SatelliteMismatch
from .features import record_altitude_km, record_columns
from .tle import TleRecord


class Label(IntEnum):
    NORMAL = 0
    MANEUVER = 1
    DECAY = 2
    BREAKUP = 3


@dataclass(frozen=True)
class RuleThresholds:
    h_reentry: float = 250.0  # km
    h_low: float = 400.0  # km
    dh_decay: float = 5.0  # km drop
    dh_man: float = 10.0  # km
    di_man: float = 0.1  # deg
    de_man: float = 0.01
    bstar_floor: float = 5e-3
    bstar_ratio: float = 2.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"threshold {name} must be positive")
        if not self.h_reentry < self.h_low:
            raise ValueError("h_reentry must be below h_low")


# (label, rule number) in priority order; rule 0 means nothing fired.
RULE_LABELS = {
    1: Label.BREAKUP,
    2: Label.DECAY,
    3: Label.MANEUVER,
    4: Label.MANEUVER,
    5: Label.MANEUVER,
    6: Label.MANEUVER,
    7: Label.DECAY,
}


def _check_pair(prev: TleRecord, cur: TleRecord) -> None:
    if prev.norad_id != cur.norad_id:
        raise SatelliteMismatch(f"{prev.norad_id} != {cur.norad_id}")
    if prev.epoch > cur.epoch:
        raise EpochOrder(f"{prev.epoch} after {cur.epoch}")


def rule_fired(prev: TleRecord, cur: TleRecord, th: RuleThresholds = RuleThresholds()) -> int:
    """Number of the highest-priority rule matching the pair, 0 if none.

    All comparisons are strict, so a delta sitting exactly on a threshold
    does not fire.
    """
    _check_pair(prev, cur)
    alt_prev = record_altitude_km(prev.mean_motion)
    alt_cur = record_altitude_km(cur.mean_motion)
    if alt_cur < th.h_reentry:
        return 1
    if alt_prev - alt_cur > th.dh_decay and alt_cur < th.h_low:
        return 2
    if abs(cur.inclination - prev.inclination) > th.di_man:
        return 3
    if abs(alt_cur - alt_prev) > th.dh_man:
        return 4
    if abs(cur.eccentricity - prev.eccentricity) > th.de_man:
        return 5
    b0, b1 = prev.bstar, cur.bstar
    if b0 * b1 < 0 and abs(b0) > th.bstar_floor and abs(b1) > th.bstar_floor:
        return 6
    # the floor guard keeps noise-level B* from producing huge ratios
    if abs(b0) > th.bstar_floor and abs(b1) / abs(b0) > th.bstar_ratio:
        return 7
    return 0


def rule_label(prev: TleRecord, cur: TleRecord, th: RuleThresholds = RuleThresholds()) -> Label:
    rule = rule_fired(prev, cur, th)
    return RULE_LABELS[rule] if rule else Label.NORMAL


def rule_arrays(alt: np.ndarray, inc: np.ndarray, ecc: np.ndarray, bstar: np.ndarray,
                th: RuleThresholds = RuleThresholds()) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized rules over one chronological history given as columns.

    Returns (labels uint8, fired rule numbers int8); index 0 has no
    predecessor and is always NORMAL.
    """
    n = len(alt)
    labels = np.zeros(n, dtype=np.uint8)
    fired = np.zeros(n, dtype=np.int8)
    if n < 2:
        return labels, fired
    a0, a1 = alt[:-1], alt[1:]
    b0, b1 = bstar[:-1], bstar[1:]
    ab0, ab1 = np.abs(b0), np.abs(b1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = ab1 / ab0
    conds = [
        a1 < th.h_reentry,
        (a0 - a1 > th.dh_decay) & (a1 < th.h_low),
        np.abs(np.diff(inc)) > th.di_man,
        np.abs(a1 - a0) > th.dh_man,
        np.abs(np.diff(ecc)) > th.de_man,
        (b0 * b1 < 0) & (ab0 > th.bstar_floor) & (ab1 > th.bstar_floor),
        (ab0 > th.bstar_floor) & (ratio > th.bstar_ratio),
    ]
    fired[1:] = np.select(conds, list(range(1, 8)), 0)
    lut = np.array([Label.NORMAL] + [RULE_LABELS[k] for k in range(1, 8)], dtype=np.uint8)
    labels[:] = lut[fired]
    return labels, fired


def rule_label_sequence(records: Sequence[TleRecord], th: RuleThresholds = RuleThresholds(),
                        return_rules: bool = False):
    """Per-timestep labels for one satellite's chronological history."""
    if not records:
        empty = np.zeros(0, dtype=np.uint8)
        return (empty, empty.astype(np.int8)) if return_rules else empty
    norad = records[0].norad_id
    if any(r.norad_id != norad for r in records):
        raise SatelliteMismatch("sequence mixes satellites")
    c = record_columns(records)
    if np.any(np.diff(c["epoch_h"]) < 0):
        raise EpochOrder("records are not chronological")
    labels, fired = rule_arrays(record_altitude_km(c["mean_motion"]), c["inclination"],
                                c["eccentricity"], c["bstar"], th)
    return (labels, fired) if return_rules else labels
