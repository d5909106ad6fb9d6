"""Eleven-feature representation of TLE records and corpus normalization."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dynamics import altitude_km, mean_motion_to_sma
from .errors import DegenerateFeature, EpochOrder, SatelliteMismatch
from .tle import TleRecord

FEATURE_NAMES: tuple[str, ...] = (
    "epoch_h",
    "mean_motion",
    "eccentricity",
    "inclination",
    "bstar",
    "alt_km",
    "dt_hours",
    "raan",
    "argp",
    "mean_anomaly",
    "n_dot",
)
N_FEATURES = len(FEATURE_NAMES)
(EPOCH_H, MEAN_MOTION, ECCENTRICITY, INCLINATION, BSTAR, ALT_KM, DT_HOURS,
 RAAN, ARGP, MEAN_ANOMALY, N_DOT) = range(N_FEATURES)
ANGLE_FEATURES = (RAAN, ARGP, MEAN_ANOMALY)


@dataclass(frozen=True)
class ClipBounds:
    bstar: tuple[float, float] = (-1.0, 1.0)
    dt_hours: tuple[float, float] = (0.0, 240.0)


def record_altitude_km(mean_motion):
    """Altitude feature shared by the rule layer and the feature layer."""
    return altitude_km(mean_motion_to_sma(mean_motion))


def clip_features(x: np.ndarray, clip: ClipBounds = ClipBounds()) -> np.ndarray:
    out = np.array(x, dtype=float, copy=True)
    out[..., BSTAR] = np.clip(out[..., BSTAR], *clip.bstar)
    out[..., DT_HOURS] = np.clip(out[..., DT_HOURS], *clip.dt_hours)
    return out


def extract_features(prev: TleRecord | None, cur: TleRecord,
                     clip: ClipBounds = ClipBounds()) -> np.ndarray:
    """Raw feature vector for ``cur``; ``epoch_h`` is absolute (hours since 1970)."""
    if prev is None:
        dt = 0.0
    else:
        if prev.norad_id != cur.norad_id:
            raise SatelliteMismatch(f"{prev.norad_id} != {cur.norad_id}")
        if prev.epoch > cur.epoch:
            raise EpochOrder(f"{prev.epoch} after {cur.epoch}")
        dt = cur.epoch_hours - prev.epoch_hours
    x = np.array([
        cur.epoch_hours,
        cur.mean_motion,
        cur.eccentricity,
        cur.inclination,
        cur.bstar,
        record_altitude_km(cur.mean_motion),
        dt,
        cur.raan,
        cur.argp,
        cur.mean_anomaly,
        cur.n_dot,
    ])
    return clip_features(x, clip)


def record_columns(records: Sequence[TleRecord]) -> dict[str, np.ndarray]:
    """Column arrays of the numeric record fields (plus epoch hours)."""
    n = len(records)
    cols = {name: np.fromiter((getattr(r, name) for r in records), float, n)
            for name in ("mean_motion", "eccentricity", "inclination", "bstar",
                         "raan", "argp", "mean_anomaly", "n_dot")}
    cols["epoch_h"] = np.fromiter((r.epoch_hours for r in records), float, n)
    return cols


def extract_sequence(records: Sequence[TleRecord], clip: ClipBounds = ClipBounds()) -> np.ndarray:
    """(N, 11) raw features of one satellite's chronological history."""
    if not records:
        return np.empty((0, N_FEATURES))
    norad = records[0].norad_id
    if any(r.norad_id != norad for r in records):
        raise SatelliteMismatch("sequence mixes satellites")
    c = record_columns(records)
    dt = np.diff(c["epoch_h"], prepend=c["epoch_h"][0])
    if np.any(dt < 0):
        raise EpochOrder("records are not chronological")
    x = np.column_stack([
        c["epoch_h"], c["mean_motion"], c["eccentricity"], c["inclination"], c["bstar"],
        record_altitude_km(c["mean_motion"]), dt, c["raan"], c["argp"], c["mean_anomaly"],
        c["n_dot"],
    ])
    return clip_features(x, clip)


class RunningMoments:
    """Per-feature count/mean/M2 accumulator, mergeable across shards."""

    def __init__(self, n_features: int = N_FEATURES):
        self.count = 0
        self.mean = np.zeros(n_features)
        self.m2 = np.zeros(n_features)

    def update(self, batch) -> "RunningMoments":
        x = np.atleast_2d(np.asarray(batch, dtype=float))
        if len(x) == 0:
            return self
        other = RunningMoments(x.shape[1])
        other.count = len(x)
        other.mean = x.mean(axis=0)
        other.m2 = ((x - other.mean) ** 2).sum(axis=0)
        return self.merge(other)

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        self.count = n
        return self

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / self.count

    def finalize(self, names: Sequence[str] = FEATURE_NAMES) -> "NormStats":
        if self.count == 0:
            raise DegenerateFeature("no samples")
        std = np.sqrt(self.variance)
        bad = [names[i] for i in np.flatnonzero(~(std > 0))]
        if bad:
            raise DegenerateFeature(f"zero variance: {', '.join(bad)}")
        return NormStats(self.mean.copy(), std, tuple(names))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        if np.any(~(np.asarray(self.std) > 0)):
            raise DegenerateFeature("standard deviations must be positive")

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"features": list(self.names), "mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float),
                   tuple(d.get("features", FEATURE_NAMES)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> bytes:
        """SHA-256 of the canonical serialization (stored in dataset headers)."""
        return hashlib.sha256(self.dumps().encode()).digest()

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "NormStats":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def compute_norm_stats(batches: Iterable[np.ndarray]) -> NormStats:
    """Corpus-wide population mean/std from an iterable of (k, 11) blocks."""
    acc = RunningMoments()
    for b in batches:
        acc.update(b)
    return acc.finalize()
