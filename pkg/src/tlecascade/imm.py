"""Interacting Multiple Model bank of unscented Kalman filters.

Three motion regimes share the same force model and differ only in process
noise: M0 nominal (station-keeping), M1 maneuver (large velocity noise) and
M2 decay (large position noise, scaled up at low altitude). Observations are
full Cartesian states derived from TLE mean elements; the observation noise
depends on the record's source tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Sequence

import numpy as np

from .dynamics import ForceConfig, KeplerElements, kepler_to_eci, mean_motion_to_sma, propagate_batch
from .errors import (
    BelowModelFloor,
    FilterFailure,
    NotPositiveDefinite,
    ReentryDuringPredict,
    SingularInnovationCovariance,
)
from .features import record_altitude_km
from .rules import Label
from .tle import Source, TleRecord

STATE_DIM = 6
_LOG_2PI = math.log(2.0 * math.pi)
_JITTER_STEPS = (0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3)


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = 1e-2
    beta: float = 2.0
    kappa: float = 0.0
    n: int = STATE_DIM

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.n + self.lam == 0.0:
            raise ValueError("n + lambda must be non-zero")

    @property
    def lam(self) -> float:
        return self.alpha**2 * (self.n + self.kappa) - self.n

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance weights for the 2n + 1 sigma points."""
        c = self.n + self.lam
        wm = np.full(2 * self.n + 1, 0.5 / c)
        wc = wm.copy()
        wm[0] = self.lam / c
        wc[0] = self.lam / c + (1.0 - self.alpha**2 + self.beta)
        return wm, wc


@dataclass(frozen=True)
class ModeConfig:
    name: str
    sigma_pos: float  # m
    sigma_vel: float  # m/s
    altitude_scaled: bool = False

    def __post_init__(self):
        if not (self.sigma_pos > 0 and self.sigma_vel > 0):
            raise ValueError("mode sigmas must be positive")

    def process_noise(self, dt: float, q_scale: float = 1.0) -> np.ndarray:
        """Diagonal Q growing linearly with the gap, normalized to one hour."""
        scale = (dt / 3600.0) * (q_scale if self.altitude_scaled else 1.0)
        diag = np.repeat([self.sigma_pos**2, self.sigma_vel**2], 3) * scale
        return np.diag(diag)


DEFAULT_MODES: tuple[ModeConfig, ...] = (
    ModeConfig("M0", 100.0, 0.01),
    ModeConfig("M1", 500.0, 1.0),
    ModeConfig("M2", 2000.0, 0.1, altitude_scaled=True),
)
MODE_LABELS = (Label.NORMAL, Label.MANEUVER, Label.DECAY)


@dataclass(frozen=True)
class ObsNoise:
    tle: tuple[float, float] = (1000.0, 1.0)  # position m, velocity m/s (1-sigma)
    supgp: tuple[float, float] = (50.0, 0.05)

    def matrix(self, source: Source | str) -> np.ndarray:
        sp, sv = self.supgp if Source(source) is Source.SUPGP else self.tle
        return np.diag(np.repeat([sp**2, sv**2], 3))


@dataclass(frozen=True)
class ImmConfig:
    transition: tuple[tuple[float, ...], ...] = (
        (0.97, 0.015, 0.015),
        (0.10, 0.85, 0.05),
        (0.02, 0.03, 0.95),
    )
    threshold: float = 0.3
    q_ref_km: float = 550.0
    q_clip: tuple[float, float] = (1.0, 20.0)
    prior_high: tuple[float, float, float] = (0.90, 0.05, 0.05)
    prior_high_km: float = 500.0
    prior_low: tuple[float, float, float] = (0.05, 0.05, 0.90)
    prior_low_km: float = 200.0
    decay_boost: float = 0.10
    boost_start_km: float = 350.0
    boost_full_km: float = 200.0
    init_inflation: float = 10.0
    max_step: float = 60.0
    # re-center on the observation when even the best mode's squared
    # Mahalanobis innovation exceeds this (inf disables)
    reacquire_nis: float = 1000.0

    def __post_init__(self):
        T = np.asarray(self.transition, dtype=float)
        if T.shape != (3, 3) or np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition matrix must be 3x3 row-stochastic")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if not self.reacquire_nis > 0:
            raise ValueError("reacquire_nis must be positive")


@dataclass
class ImmState:
    means: np.ndarray  # (3, 6)
    covs: np.ndarray  # (3, 6, 6)
    mu: np.ndarray  # (3,)
    epoch: datetime
    bstar: float = 0.0
    reacquired: bool = False

    def combined(self) -> tuple[np.ndarray, np.ndarray]:
        """Probability-weighted overall mean and covariance."""
        x = self.mu @ self.means
        d = self.means - x
        P = np.einsum("k,kij->ij", self.mu, self.covs) + np.einsum("k,ki,kj->ij", self.mu, d, d)
        return x, 0.5 * (P + P.T)


# ------------------------------------------------------------ unscented core
def _sqrt_psd(P: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; symmetrize and add escalating relative jitter."""
    P = 0.5 * (P + P.T)
    diag = np.abs(np.diag(P))
    scale = np.where(diag > 0, diag, 1.0)
    for eps in _JITTER_STEPS:
        try:
            return np.linalg.cholesky(P + np.diag(eps * scale) if eps else P)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite("covariance not positive definite after jitter")


def sigma_points(mean, cov, cfg: UkfConfig = UkfConfig()):
    """2n + 1 sigma points with their mean and covariance weights."""
    mean = np.asarray(mean, dtype=float)
    L = _sqrt_psd((cfg.n + cfg.lam) * np.asarray(cov, dtype=float))
    pts = np.empty((2 * cfg.n + 1, cfg.n))
    pts[0] = mean
    pts[1:cfg.n + 1] = mean + L.T
    pts[cfg.n + 1:] = mean - L.T
    wm, wc = cfg.weights()
    return pts, wm, wc


def unscented_moments(pts: np.ndarray, wm: np.ndarray, wc: np.ndarray):
    """Weighted mean and covariance of transformed sigma points.

    The mean is accumulated as offsets from the central point so the large,
    opposite-signed weights of small-alpha transforms cancel accurately.
    """
    mean = pts[0] + wm[1:] @ (pts[1:] - pts[0])
    d = pts - mean
    cov = (wc[:, None] * d).T @ d
    return mean, 0.5 * (cov + cov.T)


def ukf_predict(mode: ModeConfig, mean, cov, dt: float, force: ForceConfig, bstar: float,
                q_scale: float = 1.0, cfg: UkfConfig = UkfConfig(),
                max_step: float = 60.0) -> tuple[np.ndarray, np.ndarray]:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    pts, wm, wc = sigma_points(mean, cov, cfg)
    if dt > 0:
        try:
            pts = propagate_batch(pts, dt, force, bstar, max_step)
        except BelowModelFloor as exc:
            raise ReentryDuringPredict(f"mode {mode.name}: {exc}") from exc
    m, P = unscented_moments(pts, wm, wc)
    return m, P + mode.process_noise(dt, q_scale)


def ukf_update(pred_mean, pred_cov, obs, R) -> tuple[np.ndarray, np.ndarray, float]:
    """Posterior mean, covariance and log-likelihood; see ``_update``."""
    mean, cov, loglik, _ = _update(pred_mean, pred_cov, obs, R)
    return mean, cov, loglik


def _update(pred_mean, pred_cov, obs, R):
    """Update with an identity observation of the full state.

    For this observation model the predicted-observation covariance is the
    predicted state covariance and the state/observation cross-covariance
    equals it too, so the gain is ``P S^-1`` with ``S = P + R``. The
    posterior covariance uses the Joseph form to stay symmetric PSD.
    Returns the posterior mean, covariance, ``log N(y; 0, S)`` and the
    squared Mahalanobis innovation.
    """
    x = np.asarray(pred_mean, dtype=float)
    P = np.asarray(pred_cov, dtype=float)
    R = np.asarray(R, dtype=float)
    y = np.asarray(obs, dtype=float) - x
    S = P + R
    S = 0.5 * (S + S.T)
    d = np.sqrt(np.diag(S))
    if np.any(~(d > 0)):
        raise SingularInnovationCovariance("innovation covariance has a zero variance")
    try:
        L = np.linalg.cholesky(S / np.outer(d, d))
    except np.linalg.LinAlgError:
        raise SingularInnovationCovariance("innovation covariance not positive definite") from None
    # solve in the diagonally scaled frame for conditioning
    z = np.linalg.solve(L, y / d)
    maha = float(z @ z)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L)))) + 2.0 * float(np.sum(np.log(d)))
    loglik = -0.5 * (maha + logdet + len(y) * _LOG_2PI)

    Sinv_scaled = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(len(y))))
    Sinv = Sinv_scaled / np.outer(d, d)
    K = P @ Sinv
    mean = x + K @ y
    A = np.eye(len(y)) - K
    cov = A @ P @ A.T + K @ R @ K.T
    return mean, 0.5 * (cov + cov.T), loglik, maha


# ----------------------------------------------------------------- IMM layer
def adapt_to_altitude(h_km: float, cfg: ImmConfig = ImmConfig()):
    """(q_scale, mode priors, transition matrix) for altitude ``h_km``."""
    q_scale = float(np.clip((cfg.q_ref_km / h_km) ** 2, *cfg.q_clip))
    w = float(np.clip((h_km - cfg.prior_low_km) / (cfg.prior_high_km - cfg.prior_low_km), 0.0, 1.0))
    priors = np.asarray(cfg.prior_low) + w * (np.asarray(cfg.prior_high) - np.asarray(cfg.prior_low))
    priors = priors / priors.sum()
    ramp = float(np.clip((cfg.boost_start_km - h_km) / (cfg.boost_start_km - cfg.boost_full_km),
                         0.0, 1.0))
    T = np.array(cfg.transition, dtype=float)
    T[0, 2] += cfg.decay_boost * ramp
    T[0, 0] = 1.0 - T[0, 1] - T[0, 2]
    return q_scale, priors, T


def record_to_state(rec: TleRecord, mu: float) -> np.ndarray:
    """Cartesian state of a record, treating mean elements as osculating."""
    el = KeplerElements(
        a=mean_motion_to_sma(rec.mean_motion, mu),
        e=rec.eccentricity,
        i=math.radians(rec.inclination),
        raan=math.radians(rec.raan),
        argp=math.radians(rec.argp),
        mean_anomaly=math.radians(rec.mean_anomaly),
    )
    return kepler_to_eci(el, mu).as_array()


def assign_label(mu, threshold: float = 0.3) -> Label:
    """Argmax mode (ties toward M0) if its probability exceeds ``threshold``."""
    mu = np.asarray(mu, dtype=float)
    k = int(np.argmax(mu))
    return MODE_LABELS[k] if mu[k] > threshold else Label.NORMAL


def _mix(state: ImmState, T: np.ndarray):
    c = T.T @ state.mu
    W = T * state.mu[:, None]  # W[i, j] = P(prev i | next j) once normalized
    dead = c <= 0.0
    W[:, dead] = np.eye(len(c))[:, dead]  # unreachable mode keeps its own estimate
    W /= W.sum(axis=0, keepdims=True)
    means = W.T @ state.means
    covs = np.empty_like(state.covs)
    for j in range(len(c)):
        d = state.means - means[j]
        covs[j] = np.einsum("i,ikl->kl", W[:, j], state.covs) + (W[:, j, None] * d).T @ d
        covs[j] = 0.5 * (covs[j] + covs[j].T)
    return c, means, covs


@dataclass
class ImmFilter:
    """Configured filter bank; stateless apart from its configs."""

    imm: ImmConfig = field(default_factory=ImmConfig)
    ukf: UkfConfig = field(default_factory=UkfConfig)
    modes: tuple[ModeConfig, ...] = DEFAULT_MODES
    noise: ObsNoise = field(default_factory=ObsNoise)
    force: ForceConfig = field(default_factory=ForceConfig)

    def init_state(self, rec: TleRecord) -> ImmState:
        _, priors, _ = adapt_to_altitude(record_altitude_km(rec.mean_motion), self.imm)
        return self._centered(rec, priors)

    def _centered(self, rec: TleRecord, mu: np.ndarray, reacquired: bool = False) -> ImmState:
        z = record_to_state(rec, self.force.mu)
        P0 = self.noise.matrix(Source.TLE) * self.imm.init_inflation
        return ImmState(
            means=np.tile(z, (len(self.modes), 1)),
            covs=np.tile(P0, (len(self.modes), 1, 1)),
            mu=np.array(mu, dtype=float),
            epoch=rec.epoch,
            bstar=rec.bstar,
            reacquired=reacquired,
        )

    def _predict_all(self, means, covs, dt, bstar, q_scale):
        """Predict every mode; a failing mode yields ``None``."""
        n_pts = 2 * self.ukf.n + 1
        sig = [sigma_points(m, P, self.ukf) for m, P in zip(means, covs)]
        pts = np.concatenate([s[0] for s in sig])
        out: list = [None] * len(self.modes)
        try:
            if dt > 0:
                pts = propagate_batch(pts, dt, self.force, bstar, self.imm.max_step)
            groups = [pts[k * n_pts:(k + 1) * n_pts] for k in range(len(self.modes))]
        except BelowModelFloor:
            groups = []
            for s in sig:
                try:
                    groups.append(propagate_batch(s[0], dt, self.force, bstar, self.imm.max_step))
                except BelowModelFloor:
                    groups.append(None)
        for k, (mode, g) in enumerate(zip(self.modes, groups)):
            if g is None:
                continue
            m, P = unscented_moments(g, sig[k][1], sig[k][2])
            out[k] = (m, P + mode.process_noise(dt, q_scale))
        return out

    def step(self, state: ImmState, rec: TleRecord) -> tuple[ImmState, np.ndarray]:
        """One mixing/predict/update cycle; returns the new state and per-mode log-likelihoods."""
        dt = (rec.epoch - state.epoch).total_seconds()
        if dt < 0:
            raise ValueError("observation precedes filter epoch")
        z = record_to_state(rec, self.force.mu)
        q_scale, _, T = adapt_to_altitude(record_altitude_km(rec.mean_motion), self.imm)
        c, mixed_means, mixed_covs = _mix(state, T)
        preds = self._predict_all(mixed_means, mixed_covs, dt, state.bstar, q_scale)

        R = self.noise.matrix(rec.source)
        n = len(self.modes)
        means = mixed_means.copy()
        covs = mixed_covs.copy()
        loglik = np.full(n, -np.inf)
        nis = np.full(n, np.inf)
        for k, pred in enumerate(preds):
            if pred is None:
                continue
            try:
                means[k], covs[k], loglik[k], nis[k] = _update(pred[0], pred[1], z, R)
            except (SingularInnovationCovariance, NotPositiveDefinite):
                continue
        if not np.any(np.isfinite(loglik)):
            raise FilterFailure(f"all modes failed at {rec.epoch.isoformat()}")

        with np.errstate(divide="ignore"):
            logp = np.log(c) + loglik
        logp -= np.max(logp)
        mu = np.exp(logp)
        mu /= mu.sum()
        if np.min(nis) > self.imm.reacquire_nis:
            # a linear update cannot absorb this jump; the posterior would sit
            # far from the observation with a tight covariance and diverge
            return self._centered(rec, mu, reacquired=True), loglik
        return ImmState(means, covs, mu, rec.epoch, rec.bstar), loglik

    def label(self, mu) -> Label:
        return assign_label(mu, self.imm.threshold)

    def run(self, records: Sequence[TleRecord]) -> "ImmTrace":
        """Filter a whole chronological history (one satellite)."""
        n = len(records)
        mu = np.zeros((n, len(self.modes)))
        loglik = np.full((n, len(self.modes)), np.nan)
        reacquired = np.zeros(n, dtype=bool)
        if n == 0:
            return ImmTrace(mu, loglik, self.imm.threshold, reacquired)
        state = self.init_state(records[0])
        mu[0] = state.mu
        for t in range(1, n):
            state, loglik[t] = self.step(state, records[t])
            mu[t] = state.mu
            reacquired[t] = state.reacquired
        return ImmTrace(mu, loglik, self.imm.threshold, reacquired)


@dataclass
class ImmTrace:
    mu: np.ndarray  # (N, 3)
    loglik: np.ndarray  # (N, 3); row 0 is NaN (initialization)
    threshold: float = 0.3
    reacquired: np.ndarray | None = None  # (N,) bool

    @property
    def labels(self) -> np.ndarray:
        return np.array([assign_label(m, self.threshold) for m in self.mu], dtype=np.uint8)


# -------------------------------------------------------- functional surface
def init_state(rec: TleRecord, imm: ImmConfig = ImmConfig(), noise: ObsNoise = ObsNoise(),
               force: ForceConfig = ForceConfig()) -> ImmState:
    return ImmFilter(imm=imm, noise=noise, force=force).init_state(rec)


def imm_step(state: ImmState, rec: TleRecord, imm: ImmConfig = ImmConfig(),
             ukf: UkfConfig = UkfConfig(), modes: tuple[ModeConfig, ...] = DEFAULT_MODES,
             force: ForceConfig = ForceConfig(), noise: ObsNoise = ObsNoise()):
    return ImmFilter(imm, ukf, modes, noise, force).step(state, rec)


def with_source(rec: TleRecord, source: Source) -> TleRecord:
    return replace(rec, source=Source(source))
