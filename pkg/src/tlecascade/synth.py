"""Synthetic TLE histories with known injected events (validation oracle)."""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .dynamics import (
    MU_EARTH,
    R_MEAN_KM,
    ForceConfig,
    KeplerElements,
    eci_to_kepler,
    kepler_to_eci,
    propagate_batch,
    sma_to_mean_motion,
)
from .errors import BelowModelFloor, ConfigError, LengthMismatch
from .rules import Label
from .tle import Source, TleRecord, quantize

log = logging.getLogger(__name__)

DEFAULT_START = datetime(2024, 1, 1, tzinfo=timezone.utc)
DEFAULT_NOISE: dict[Source, tuple[float, float]] = {
    Source.TLE: (1000.0, 1.0),
    Source.SUPGP: (50.0, 0.05),
}


class EventKind(str, Enum):
    IMPULSE = "IMPULSE"
    DRAG_SCALE = "DRAG_SCALE"


@dataclass(frozen=True)
class Event:
    """An impulse (``dv`` in radial/along-track/cross-track m/s) or a drag
    multiplier applied from ``at_hours`` (relative to the first observation)."""

    at_hours: float
    kind: EventKind
    dv: tuple[float, float, float] = (0.0, 0.0, 0.0)
    multiplier: float = 1.0


def impulse(at_hours: float, along_track: float = 0.0, radial: float = 0.0,
            cross_track: float = 0.0) -> Event:
    return Event(at_hours, EventKind.IMPULSE, dv=(radial, along_track, cross_track))


def drag_scale(at_hours: float, multiplier: float) -> Event:
    return Event(at_hours, EventKind.DRAG_SCALE, multiplier=multiplier)


@dataclass(frozen=True)
class Scenario:
    elements: KeplerElements
    schedule: tuple[float, ...]  # hours between consecutive observations
    norad_id: int = 90000
    bstar: float = 1e-4
    n_dot: float = 0.0
    start: datetime = DEFAULT_START
    sources: tuple[Source, ...] | None = None  # one per observation; default all TLE
    noise: Mapping[Source, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_NOISE))
    events: tuple[Event, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if any(not dt > 0 for dt in self.schedule):
            raise ValueError("schedule gaps must be positive")
        span = float(sum(self.schedule))
        for ev in self.events:
            if not 0.0 <= ev.at_hours <= span:
                raise ValueError(f"event at {ev.at_hours} h outside the schedule span")
        if self.sources is not None and len(self.sources) != self.n_obs:
            raise ValueError("need one source tag per observation")

    @property
    def n_obs(self) -> int:
        return len(self.schedule) + 1

    def obs_hours(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.schedule)])


def circular_scenario(alt_km: float, n_obs: int, cadence_hours: float = 8.0, *,
                      inclination_deg: float = 53.0, raan_deg: float = 0.0,
                      mean_anomaly_deg: float = 0.0, eccentricity: float = 1e-4,
                      argp_deg: float = 90.0, **kw) -> Scenario:
    """Near-circular scenario at ``alt_km`` above the mean Earth radius."""
    el = KeplerElements(
        a=(R_MEAN_KM + alt_km) * 1e3,
        e=eccentricity,
        i=math.radians(inclination_deg),
        raan=math.radians(raan_deg),
        argp=math.radians(argp_deg),
        mean_anomaly=math.radians(mean_anomaly_deg),
    )
    return Scenario(el, (cadence_hours,) * (n_obs - 1), **kw)


@dataclass
class SynthHistory:
    records: list[TleRecord]
    labels: np.ndarray  # uint8 truth label per record
    reentered: bool = False
    truth_states: np.ndarray | None = None  # (N, 6) noiseless states

    def __iter__(self):
        return iter((self.records, self.labels))


def _rtn_to_inertial(x: np.ndarray, dv_rtn) -> np.ndarray:
    r, v = x[:3], x[3:]
    rh = r / np.linalg.norm(r)
    nh = np.cross(r, v)
    nh /= np.linalg.norm(nh)
    th = np.cross(nh, rh)
    return dv_rtn[0] * rh + dv_rtn[1] * th + dv_rtn[2] * nh


def state_to_record(x: np.ndarray, epoch: datetime, sc: Scenario, source: Source,
                    mu: float = MU_EARTH) -> TleRecord:
    el = eci_to_kepler(x, mu)
    rec = TleRecord(
        norad_id=sc.norad_id,
        epoch=epoch,
        mean_motion=sma_to_mean_motion(el.a, mu),
        eccentricity=el.e,
        inclination=math.degrees(el.i),
        raan=math.degrees(el.raan) % 360.0,
        argp=math.degrees(el.argp) % 360.0,
        mean_anomaly=math.degrees(el.mean_anomaly) % 360.0,
        bstar=sc.bstar,
        n_dot=sc.n_dot,
        source=source,
    )
    return quantize(rec)


def generate(sc: Scenario, force: ForceConfig = ForceConfig(), max_step: float = 60.0) -> SynthHistory:
    """Integrate the truth trajectory and emit noisy TLE records.

    Events falling exactly on an observation epoch act before that
    observation. Reported B* stays at the scenario's nominal value after a
    drag change. A reentry truncates the history; the last retained record
    is then labeled BREAKUP.
    """
    rng = np.random.default_rng(sc.seed)
    hours = sc.obs_hours()
    sources = sc.sources or (Source.TLE,) * sc.n_obs
    events = sorted(sc.events, key=lambda e: e.at_hours)

    x = kepler_to_eci(sc.elements, force.mu).as_array()
    t = 0.0
    drag_mult = 1.0
    records: list[TleRecord] = []
    labels: list[int] = []
    truth: list[np.ndarray] = []
    ev_i = 0
    decaying = False
    reentered = False

    for k, t_obs in enumerate(hours):
        maneuver_here = False
        try:
            while ev_i < len(events) and events[ev_i].at_hours <= t_obs:
                ev = events[ev_i]
                x = propagate_batch(x, (ev.at_hours - t) * 3600.0, force, sc.bstar * drag_mult, max_step)
                t = ev.at_hours
                if ev.kind is EventKind.IMPULSE:
                    x = x.copy()
                    x[3:] += _rtn_to_inertial(x, ev.dv)
                    maneuver_here = True
                else:
                    drag_mult = ev.multiplier
                    decaying = True
                ev_i += 1
            x = propagate_batch(x, (t_obs - t) * 3600.0, force, sc.bstar * drag_mult, max_step)
            t = t_obs
        except BelowModelFloor:
            reentered = True
            break

        sp, sv = sc.noise[sources[k]]
        noisy = x + np.concatenate([rng.normal(0.0, sp, 3), rng.normal(0.0, sv, 3)])
        epoch = sc.start + timedelta(hours=float(t_obs))
        records.append(state_to_record(noisy, epoch, sc, sources[k], force.mu))
        truth.append(x.copy())
        if maneuver_here:
            labels.append(Label.MANEUVER)
        elif decaying:
            labels.append(Label.DECAY)
        else:
            labels.append(Label.NORMAL)

    if reentered:
        log.warning("satellite %d reentered after %d observations", sc.norad_id, len(records))
        if labels:
            labels[-1] = Label.BREAKUP
    return SynthHistory(records, np.asarray(labels, dtype=np.uint8), reentered,
                        np.asarray(truth) if truth else np.empty((0, 6)))


# ------------------------------------------------------------ evaluation
@dataclass(frozen=True)
class ClassReport:
    precision: float
    recall: float
    n_truth: int
    n_pred: int
    precision_defined: bool
    recall_defined: bool


def detection_report(truth: Sequence[int], predicted: Sequence[int],
                     tolerance: int = 3) -> dict[Label, ClassReport]:
    """Per-class precision/recall with a +/- ``tolerance`` timestep match window.

    Undefined ratios (no predictions, no truth events) are reported as 0 with
    the matching ``*_defined`` flag cleared.
    """
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.shape != predicted.shape:
        raise LengthMismatch(f"{truth.shape} vs {predicted.shape}")
    out = {}
    for cls in (Label.MANEUVER, Label.DECAY, Label.BREAKUP):
        t_idx = np.flatnonzero(truth == cls)
        p_idx = np.flatnonzero(predicted == cls)

        def near(idx, targets):
            if len(targets) == 0:
                return np.zeros(len(idx), dtype=bool)
            return np.min(np.abs(idx[:, None] - targets[None, :]), axis=1) <= tolerance

        hits_t = near(t_idx, p_idx)
        hits_p = near(p_idx, t_idx)
        recall = float(hits_t.mean()) if len(t_idx) else 0.0
        precision = float(hits_p.mean()) if len(p_idx) else 0.0
        out[cls] = ClassReport(precision, recall, len(t_idx), len(p_idx),
                               precision_defined=len(p_idx) > 0, recall_defined=len(t_idx) > 0)
    return out


# ------------------------------------------------------------ scenario files
_SCENARIO_KEYS = {
    "alt_km": float, "n_obs": int, "cadence_hours": float, "inclination_deg": float,
    "raan_deg": float, "argp_deg": float, "mean_anomaly_deg": float, "eccentricity": float,
    "bstar": float, "n_dot": float, "norad_id": int, "seed": int, "start": str, "sources": str,
}
_EVENT_KEYS = {"kind", "at_hours", "dv", "multiplier"}


def scenario_from_string(text: str, origin: str = "<string>") -> Scenario:
    """Build a circular scenario from INI text.

    ``[scenario]`` holds the orbit and schedule, ``[noise]`` optional
    ``tle``/``supgp`` sigma pairs, and each ``[event:<name>]`` section one
    event (``kind = impulse`` with ``dv = radial, along, cross`` or
    ``kind = drag_scale`` with ``multiplier``).
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    if not cp.has_section("scenario"):
        raise ConfigError(f"{origin}: missing [scenario] section")
    kw: dict = {}
    events = []
    noise = dict(DEFAULT_NOISE)
    try:
        for section in cp.sections():
            items = dict(cp.items(section))
            if section == "scenario":
                for key, raw in items.items():
                    if key not in _SCENARIO_KEYS:
                        raise ConfigError(f"{origin}: unknown key '{key}' in [scenario]")
                    kw[key] = _SCENARIO_KEYS[key](raw) if key not in ("start", "sources") else raw
            elif section == "noise":
                for key, raw in items.items():
                    src = Source(key.upper())
                    sp, sv = (float(v) for v in raw.split(","))
                    noise[src] = (sp, sv)
            elif section.startswith("event:"):
                unknown = set(items) - _EVENT_KEYS
                if unknown:
                    raise ConfigError(f"{origin}: unknown keys {sorted(unknown)} in [{section}]")
                kind = items.get("kind", "").strip().lower()
                at = float(items["at_hours"])
                if kind == "impulse":
                    r, t, n = (float(v) for v in items.get("dv", "0,0,0").split(","))
                    events.append(impulse(at, along_track=t, radial=r, cross_track=n))
                elif kind == "drag_scale":
                    events.append(drag_scale(at, float(items["multiplier"])))
                else:
                    raise ConfigError(f"{origin}: [{section}] unknown kind {kind!r}")
            else:
                raise ConfigError(f"{origin}: unknown section [{section}]")
        alt = kw.pop("alt_km")
        n_obs = kw.pop("n_obs")
        if "start" in kw:
            start = datetime.fromisoformat(kw.pop("start"))
            kw["start"] = start if start.tzinfo else start.replace(tzinfo=timezone.utc)
        if "sources" in kw:
            kw["sources"] = tuple(Source(s.strip().upper()) for s in kw.pop("sources").split(","))
        return circular_scenario(alt, n_obs, events=tuple(events), noise=noise, **kw)
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{origin}: {exc}") from exc


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_string(text, str(path))
