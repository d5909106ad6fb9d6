"""Tier orchestration, cross-tier statistics and the frozen-physics innovation score."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np

from .dynamics import SECONDS_PER_DAY, TWO_PI, ForceConfig, atmosphere_density, mean_motion_to_sma
from .errors import CascadeError, NonPositiveSigma, UndefinedRatio
from .features import (
    ALT_KM, ANGLE_FEATURES, ARGP, BSTAR, DT_HOURS, ECCENTRICITY, EPOCH_H, INCLINATION,
    MEAN_ANOMALY, MEAN_MOTION, N_DOT, N_FEATURES, RAAN, extract_sequence, record_altitude_km,
)
from .imm import ImmFilter
from .rules import Label, RuleThresholds, rule_label_sequence
from .tle import Source, TleRecord
from .windowing import Window

log = logging.getLogger(__name__)


class Tier(enum.Flag):
    RULE = enum.auto()
    IMM = enum.auto()
    SCORE = enum.auto()


ALL_TIERS = Tier.RULE | Tier.IMM | Tier.SCORE


@dataclass(frozen=True)
class PhysicsConfig:
    """Element-space propagator used for the innovation score."""

    force: ForceConfig = field(default_factory=ForceConfig)
    ecc_decay: float = 1.0  # coefficient k in de/dt = -k * rho * B * n * a * e


# ------------------------------------------------------------ records
@dataclass(frozen=True)
class CascadeRecord:
    norad_id: int
    epoch: datetime
    rule_label: Label
    source: Source = Source.TLE
    imm_label: Label | None = None
    mu: tuple[float, float, float] | None = None
    score: float | None = None

    def __post_init__(self):
        if (self.imm_label is None) != (self.mu is None):
            raise ValueError("mu must be present exactly when the imm label is")

    def to_dict(self) -> dict:
        return {
            "norad": self.norad_id,
            "epoch": self.epoch.isoformat(),
            "rule": self.rule_label.name,
            "imm": None if self.imm_label is None else self.imm_label.name,
            "mu": None if self.mu is None else list(self.mu),
            "source": self.source.value,
            "score": self.score,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeRecord":
        return cls(
            norad_id=int(d["norad"]),
            epoch=datetime.fromisoformat(d["epoch"]),
            rule_label=Label[d["rule"]],
            source=Source(d["source"]),
            imm_label=None if d.get("imm") is None else Label[d["imm"]],
            mu=None if d.get("mu") is None else tuple(float(v) for v in d["mu"]),
            score=d.get("score"),
        )


@dataclass(frozen=True)
class InnovationRecord:
    t: int  # transition t -> t+1 within the window
    innovation: np.ndarray  # (11,)
    score: float


# ------------------------------------------------------------ physics
def physics_predict_elements(v, dt_hours: float, cfg: PhysicsConfig = PhysicsConfig()) -> np.ndarray:
    """First-order element-space propagation of one raw feature vector.

    The TLE n_dot field holds half the mean-motion derivative, so the rate
    applied here is twice the field value. Eccentricity decays at
    ``k * rho * B * n * a`` per second and is clamped at 0; raan and argp
    follow the J2 secular rates.
    """
    if dt_hours < 0:
        raise ValueError("dt must be non-negative")
    x = np.array(v, dtype=float, copy=True)
    force = cfg.force
    dt_days = dt_hours / 24.0
    dt_s = dt_hours * 3600.0
    n0 = x[MEAN_MOTION]
    n_dot = x[N_DOT]
    n1 = n0 + 2.0 * n_dot * dt_days

    a = float(mean_motion_to_sma(n0, force.mu))
    n_rad = n0 * TWO_PI / SECONDS_PER_DAY
    e = x[ECCENTRICITY]
    if force.use_drag and cfg.ecc_decay > 0 and e > 0:
        h_km = max(float(x[ALT_KM]), force.floor_km)
        rho = float(atmosphere_density(h_km, force))
        rate = cfg.ecc_decay * rho * force.ballistic(x[BSTAR]) * n_rad * a
        e = e * math.exp(-rate * dt_s)
    x[ECCENTRICITY] = max(e, 0.0)

    if force.use_j2:
        p = a * (1.0 - x[ECCENTRICITY] ** 2)
        k = 1.5 * n_rad * force.j2 * (force.re_equatorial / p) ** 2
        cos_i = math.cos(math.radians(x[INCLINATION]))
        x[RAAN] += math.degrees(-k * cos_i * dt_s)
        x[ARGP] += math.degrees(0.5 * k * (5.0 * cos_i**2 - 1.0) * dt_s)

    x[MEAN_ANOMALY] += 360.0 * (n0 * dt_days + n_dot * dt_days**2)
    for j in ANGLE_FEATURES:
        x[j] %= 360.0
    x[MEAN_MOTION] = n1
    x[ALT_KM] = record_altitude_km(n1)
    x[EPOCH_H] += dt_hours
    x[DT_HOURS] = dt_hours
    return x


def _circular_diff(a, b):
    """a - b in degrees, mapped into (-180, 180]."""
    d = np.mod(np.asarray(a) - np.asarray(b), 360.0)
    return np.where(d > 180.0, d - 360.0, d)


def innovation_score(window, sigma, cfg: PhysicsConfig = PhysicsConfig()) -> list[InnovationRecord]:
    """Score each transition of a raw-feature window against the frozen physics."""
    data = window.data if isinstance(window, Window) else np.asarray(window, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (N_FEATURES,) or np.any(~(sigma > 0)):
        raise NonPositiveSigma("sigma must be a strictly positive 11-vector")
    if len(data) < 2:
        raise ValueError("window needs at least two rows")
    out = []
    for t in range(len(data) - 1):
        pred = physics_predict_elements(data[t], float(data[t + 1, DT_HOURS]), cfg)
        innov = data[t + 1] - pred
        for j in ANGLE_FEATURES:
            innov[j] = _circular_diff(data[t + 1, j], pred[j])
        out.append(InnovationRecord(t, innov, float(np.linalg.norm(innov / sigma))))
    return out


# ------------------------------------------------------------ orchestration
def run_cascade(history: Sequence[TleRecord], tiers: Tier = ALL_TIERS,
                rules: RuleThresholds = RuleThresholds(), imm: ImmFilter | None = None,
                sigma=None, physics: PhysicsConfig = PhysicsConfig()) -> list[CascadeRecord]:
    """Label one satellite's chronological history with every enabled tier.

    The supGP channel needs no flag: the filter picks R from each record's
    source tag. A filter failure downgrades the whole satellite to rule-only
    output. ``Tier.SCORE`` needs ``sigma``; record t carries the score of
    the transition that ends at t.
    """
    if Tier.RULE not in tiers:
        raise ValueError("the rule tier is always required")
    if not history:
        return []
    rule = rule_label_sequence(history, rules)
    n = len(history)

    mu = None
    if Tier.IMM in tiers:
        filt = imm or ImmFilter()
        try:
            trace = filt.run(history)
            mu = trace.mu
            imm_labels = trace.labels
        except CascadeError as exc:
            log.warning("satellite %d: filter failed (%s); rule-only output",
                        history[0].norad_id, exc)

    scores = [None] * n
    if Tier.SCORE in tiers:
        if sigma is None:
            raise ValueError("score tier needs a sigma vector")
        if n >= 2:
            for r in innovation_score(extract_sequence(history), sigma, physics):
                scores[r.t + 1] = r.score

    out = []
    for t, rec in enumerate(history):
        out.append(CascadeRecord(
            norad_id=rec.norad_id,
            epoch=rec.epoch,
            rule_label=Label(int(rule[t])),
            source=rec.source,
            imm_label=None if mu is None else Label(int(imm_labels[t])),
            mu=None if mu is None else tuple(float(v) for v in mu[t]),
            score=scores[t],
        ))
    return out


# ------------------------------------------------------------ statistics
@dataclass(frozen=True)
class TierStats:
    rule: int  # non-normal rule labels on timesteps where both tiers ran
    imm: int  # non-normal filter labels on the same timesteps
    both: int
    timesteps: int = 0
    rule_only_timesteps: int = 0  # filter absent
    rule_only_flags: int = 0  # non-normal rule labels on those timesteps

    def __post_init__(self):
        if not 0 <= self.both <= min(self.rule, self.imm):
            raise ValueError("overlap count inconsistent with totals")

    @property
    def only_rule(self) -> int:
        return self.rule - self.both

    @property
    def only_imm(self) -> int:
        return self.imm - self.both

    @property
    def ratio(self) -> float:
        if self.rule == 0:
            raise UndefinedRatio("rule tier produced no non-normal labels")
        return self.imm / self.rule

    @property
    def overlap_fraction(self) -> float:
        """Fraction of rule positives the filter also flags."""
        if self.rule == 0:
            raise UndefinedRatio("rule tier produced no non-normal labels")
        return self.both / self.rule

    def merge(self, other: "TierStats") -> "TierStats":
        return TierStats(self.rule + other.rule, self.imm + other.imm, self.both + other.both,
                         self.timesteps + other.timesteps,
                         self.rule_only_timesteps + other.rule_only_timesteps,
                         self.rule_only_flags + other.rule_only_flags)

    def summary(self) -> dict:
        d = {
            "timesteps": self.timesteps,
            "rule_non_normal": self.rule,
            "imm_non_normal": self.imm,
            "both": self.both,
            "only_rule": self.only_rule,
            "only_imm": self.only_imm,
            "rule_only_timesteps": self.rule_only_timesteps,
            "rule_only_flags": self.rule_only_flags,
        }
        try:
            d["ratio"] = round(self.ratio, 1)
            d["overlap_fraction"] = self.overlap_fraction
        except UndefinedRatio:
            d["ratio"] = None
            d["overlap_fraction"] = None
        return d


def tier_stats(records: Iterable[CascadeRecord]) -> TierStats:
    rule = imm = both = steps = lone = lone_flags = 0
    for r in records:
        r_flag = r.rule_label is not Label.NORMAL
        if r.imm_label is None:
            lone += 1
            lone_flags += r_flag
            continue
        i_flag = r.imm_label is not Label.NORMAL
        steps += 1
        rule += r_flag
        imm += i_flag
        both += r_flag and i_flag
    return TierStats(rule, imm, both, steps, lone, lone_flags)
