"""Orbital element conversions, force model and RK4 propagation.

States are 6-vectors ``[x, y, z, vx, vy, vz]`` in meters and meters/second
(Earth-centered inertial). The force model sums two-body gravity, the J2
oblateness term and drag in a piecewise-exponential atmosphere; its inner
loops are compiled with numba so that whole batches of sigma points can be
integrated in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import BelowModelFloor, Degenerate, Hyperbolic, NoConvergence, NonPositive

MU_EARTH = 3.986004418e14  # m^3/s^2
J2_EARTH = 1.08262668e-3
RE_EQUATORIAL = 6378.137e3  # m
R_MEAN_KM = 6371.0  # altitude feature reference only
SECONDS_PER_DAY = 86400.0
TWO_PI = 2.0 * math.pi

# SGP4 reference density 2.461e-5 kg m^-2 km^-1, i.e. per Earth radius of 6378.135 km.
RHO_REF = 2.461e-5 * 6378.135
BSTAR_TO_BALLISTIC = 2.0 / RHO_REF  # m^2/kg per (1/earth radii)

# Piecewise-exponential atmosphere, 100-1000 km: (base km, base kg/m^3, scale height km).
DEFAULT_ATMOSPHERE: tuple[tuple[float, float, float], ...] = (
    (100.0, 5.297e-7, 5.877),
    (110.0, 9.661e-8, 7.263),
    (120.0, 2.438e-8, 9.473),
    (130.0, 8.484e-9, 12.636),
    (140.0, 3.845e-9, 16.149),
    (150.0, 2.070e-9, 22.523),
    (180.0, 5.464e-10, 29.740),
    (200.0, 2.789e-10, 37.105),
    (250.0, 7.248e-11, 45.546),
    (300.0, 2.418e-11, 53.628),
    (350.0, 9.518e-12, 53.298),
    (400.0, 3.725e-12, 58.515),
    (450.0, 1.585e-12, 60.828),
    (500.0, 6.967e-13, 63.822),
    (600.0, 1.454e-13, 71.835),
    (700.0, 3.614e-14, 88.667),
    (800.0, 1.170e-14, 124.64),
    (900.0, 5.245e-15, 181.05),
    (1000.0, 3.019e-15, 268.00),
)


@dataclass(frozen=True)
class ForceConfig:
    mu: float = MU_EARTH
    re_equatorial: float = RE_EQUATORIAL
    j2: float = J2_EARTH
    atmosphere: tuple[tuple[float, float, float], ...] = DEFAULT_ATMOSPHERE
    bstar_to_ballistic: float = BSTAR_TO_BALLISTIC
    use_j2: bool = True
    use_drag: bool = True
    _tables: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bands = np.asarray(self.atmosphere, dtype=float)
        if bands.ndim != 2 or bands.shape[1] != 3 or len(bands) == 0:
            raise ValueError("atmosphere must be a list of (h0_km, rho0, H_km) bands")
        h0, rho0, scale = bands.T
        if np.any(np.diff(h0) <= 0):
            raise ValueError("atmosphere band bases must be strictly increasing")
        if np.any(rho0 <= 0) or np.any(np.diff(rho0) >= 0):
            raise ValueError("atmosphere base densities must be positive and decreasing")
        if np.any(scale <= 0):
            raise ValueError("scale heights must be positive")
        object.__setattr__(self, "atmosphere", tuple(tuple(map(float, b)) for b in bands))
        object.__setattr__(self, "_tables", (h0.copy(), rho0.copy(), scale.copy()))

    @property
    def floor_km(self) -> float:
        return self.atmosphere[0][0]

    def ballistic(self, bstar: float) -> float:
        """Ballistic coefficient (m^2/kg) from B*; negative B* gives zero."""
        return max(float(bstar), 0.0) * self.bstar_to_ballistic


@dataclass(frozen=True)
class KeplerElements:
    """Classical elements; angles in radians, ``a`` in meters."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    mean_anomaly: float


@dataclass(frozen=True)
class EciState:
    position: np.ndarray
    velocity: np.ndarray

    @classmethod
    def from_array(cls, x) -> "EciState":
        x = np.asarray(x, dtype=float)
        return cls(x[:3].copy(), x[3:6].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def _as_vec(s) -> np.ndarray:
    return s.as_array() if isinstance(s, EciState) else np.asarray(s, dtype=float)


# ------------------------------------------------------------- elements
def mean_motion_to_sma(n_rev_day, mu: float = MU_EARTH):
    """Semi-major axis in meters from mean motion in rev/day."""
    n = np.asarray(n_rev_day, dtype=float)
    if np.any(~(n > 0)):
        raise NonPositive("mean motion must be positive")
    n_rad = n * TWO_PI / SECONDS_PER_DAY
    a = np.cbrt(mu / n_rad**2)
    return float(a) if a.ndim == 0 else a


def sma_to_mean_motion(a, mu: float = MU_EARTH):
    """Mean motion in rev/day for semi-major axis ``a`` in meters."""
    a = np.asarray(a, dtype=float)
    n = np.sqrt(mu / a**3) * SECONDS_PER_DAY / TWO_PI
    return float(n) if n.ndim == 0 else n


def altitude_km(a):
    """Altitude above the mean Earth radius, km."""
    if np.ndim(a):
        return np.asarray(a, dtype=float) / 1000.0 - R_MEAN_KM
    return float(a) / 1000.0 - R_MEAN_KM


def solve_kepler(mean_anomaly, e: float, tol: float = 1e-12, max_iter: int = 50):
    """Eccentric anomaly E with E - e sin E = M (Newton, started at E = M)."""
    if not 0.0 <= e < 1.0:
        raise Hyperbolic(f"eccentricity {e} outside [0, 1)")
    M = np.asarray(mean_anomaly, dtype=float)
    E = M.copy()
    for _ in range(max_iter):
        f = E - e * np.sin(E) - M
        if np.all(np.abs(f) < tol):
            return float(E) if E.ndim == 0 else E
        E = E - f / (1.0 - e * np.cos(E))
    f = E - e * np.sin(E) - M
    if np.all(np.abs(f) < tol):
        return float(E) if E.ndim == 0 else E
    raise NoConvergence(f"Kepler equation did not converge (e={e})")


def _rotation(raan: float, inc: float, argp: float) -> np.ndarray:
    """Perifocal-to-inertial rotation R3(-raan) R1(-inc) R3(-argp)."""
    cO, sO = math.cos(raan), math.sin(raan)
    ci, si = math.cos(inc), math.sin(inc)
    cw, sw = math.cos(argp), math.sin(argp)
    return np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])


def kepler_to_eci(el: KeplerElements, mu: float = MU_EARTH) -> EciState:
    if not 0.0 <= el.e < 1.0:
        raise Hyperbolic(f"eccentricity {el.e} outside [0, 1)")
    if not el.a > 0:
        raise NonPositive("semi-major axis must be positive")
    e = el.e
    E = solve_kepler(math.fmod(el.mean_anomaly, TWO_PI), e)
    nu = 2.0 * math.atan2(math.sqrt(1.0 + e) * math.sin(E / 2), math.sqrt(1.0 - e) * math.cos(E / 2))
    p = el.a * (1.0 - e * e)
    r = el.a * (1.0 - e * math.cos(E))
    r_pf = np.array([r * math.cos(nu), r * math.sin(nu), 0.0])
    v_pf = math.sqrt(mu / p) * np.array([-math.sin(nu), e + math.cos(nu), 0.0])
    R = _rotation(el.raan, el.i, el.argp)
    return EciState(R @ r_pf, R @ v_pf)


def _wrap(angle: float) -> float:
    out = math.fmod(angle, TWO_PI)
    if out < 0.0:
        out += TWO_PI
    return 0.0 if out >= TWO_PI else out


def eci_to_kepler(s, mu: float = MU_EARTH) -> KeplerElements:
    """Osculating elements of a Cartesian state, angles wrapped to [0, 2pi).

    RAAN is set to 0 for (anti-)equatorial orbits (i or pi - i below 1e-8)
    and the argument of perigee to 0 for eccentricity below 1e-8.
    """
    x = _as_vec(s)
    r_vec, v_vec = x[:3], x[3:6]
    r = float(np.linalg.norm(r_vec))
    h_vec = np.cross(r_vec, v_vec)
    h = float(np.linalg.norm(h_vec))
    if r == 0.0 or h <= 1e-12 * r * float(np.linalg.norm(v_vec)):
        raise Degenerate("zero angular momentum")
    v2 = float(v_vec @ v_vec)
    energy = 0.5 * v2 - mu / r
    e_vec = ((v2 - mu / r) * r_vec - float(r_vec @ v_vec) * v_vec) / mu
    e = float(np.linalg.norm(e_vec))
    if e >= 1.0 or energy >= 0.0:
        raise Hyperbolic(f"eccentricity {e} is not elliptic")
    a = -mu / (2.0 * energy)

    w = h_vec / h
    inc = math.acos(max(-1.0, min(1.0, w[2])))
    node = np.array([-w[1], w[0], 0.0])
    node_norm = float(np.linalg.norm(node))
    if inc < 1e-8 or math.pi - inc < 1e-8 or node_norm == 0.0:
        raan = 0.0
        p_hat = np.array([1.0, 0.0, 0.0])
    else:
        p_hat = node / node_norm
        raan = math.atan2(p_hat[1], p_hat[0])
    q_hat = np.cross(w, p_hat)
    u = math.atan2(float(r_vec @ q_hat), float(r_vec @ p_hat))
    if e < 1e-8:
        argp = 0.0
        nu = u
    else:
        argp = math.atan2(float(e_vec @ q_hat), float(e_vec @ p_hat))
        nu = u - argp
    E = 2.0 * math.atan2(math.sqrt(1.0 - e) * math.sin(nu / 2), math.sqrt(1.0 + e) * math.cos(nu / 2))
    M = E - e * math.sin(E)
    return KeplerElements(a, e, inc, _wrap(raan), _wrap(argp), _wrap(M))


# --------------------------------------------------------- force model
def atmosphere_density(h_km, cfg: ForceConfig):
    """Density (kg/m^3) at geometric altitude ``h_km``; scalar or array."""
    h0, rho0, scale = cfg._tables
    h = np.asarray(h_km, dtype=float)
    if np.any(h < h0[0]):
        raise BelowModelFloor(f"altitude below {h0[0]} km atmosphere floor")
    idx = np.searchsorted(h0, h, side="right") - 1
    rho = rho0[idx] * np.exp(-(h - h0[idx]) / scale[idx])
    return float(rho) if rho.ndim == 0 else rho


@numba.njit(cache=True)
def _accel_into(x, out, mu, re, j2, use_j2, use_drag, ballistic, h0, rho0, scale):
    """Write accelerations of states ``x`` (N, 6) into ``out`` (N, 3).

    Returns False if any state sits below the atmosphere floor with drag on.
    """
    ok = True
    for k in range(x.shape[0]):
        px, py, pz = x[k, 0], x[k, 1], x[k, 2]
        vx, vy, vz = x[k, 3], x[k, 4], x[k, 5]
        r2 = px * px + py * py + pz * pz
        r = math.sqrt(r2)
        g = -mu / (r2 * r)
        ax, ay, az = g * px, g * py, g * pz
        if use_j2:
            z2 = pz * pz / r2
            c = -1.5 * j2 * mu * re * re / (r2 * r2 * r)
            ax += c * px * (1.0 - 5.0 * z2)
            ay += c * py * (1.0 - 5.0 * z2)
            az += c * pz * (3.0 - 5.0 * z2)
        if use_drag:
            h = (r - re) / 1000.0
            if h < h0[0]:
                ok = False
            elif ballistic > 0.0:
                j = h0.shape[0] - 1
                while h0[j] > h:
                    j -= 1
                rho = rho0[j] * math.exp(-(h - h0[j]) / scale[j])
                v = math.sqrt(vx * vx + vy * vy + vz * vz)
                d = -0.5 * rho * ballistic * v
                ax += d * vx
                ay += d * vy
                az += d * vz
        out[k, 0] = ax
        out[k, 1] = ay
        out[k, 2] = az
    return ok


@numba.njit(cache=True)
def _rk4_batch(x, dt, n_steps, mu, re, j2, use_j2, use_drag, ballistic, h0, rho0, scale):
    """Integrate ``n_steps`` classical RK4 steps of size ``dt`` in place."""
    n = x.shape[0]
    k1 = np.empty((n, 3))
    k2 = np.empty((n, 3))
    k3 = np.empty((n, 3))
    k4 = np.empty((n, 3))
    tmp = np.empty((n, 6))
    half = 0.5 * dt
    for _ in range(n_steps):
        ok = _accel_into(x, k1, mu, re, j2, use_j2, use_drag, ballistic, h0, rho0, scale)
        for k in range(n):
            for d in range(3):
                tmp[k, d] = x[k, d] + half * x[k, d + 3]
                tmp[k, d + 3] = x[k, d + 3] + half * k1[k, d]
        ok &= _accel_into(tmp, k2, mu, re, j2, use_j2, use_drag, ballistic, h0, rho0, scale)
        for k in range(n):
            for d in range(3):
                tmp[k, d] = x[k, d] + half * (x[k, d + 3] + half * k1[k, d])
                tmp[k, d + 3] = x[k, d + 3] + half * k2[k, d]
        ok &= _accel_into(tmp, k3, mu, re, j2, use_j2, use_drag, ballistic, h0, rho0, scale)
        for k in range(n):
            for d in range(3):
                tmp[k, d] = x[k, d] + dt * (x[k, d + 3] + half * k2[k, d])
                tmp[k, d + 3] = x[k, d + 3] + dt * k3[k, d]
        ok &= _accel_into(tmp, k4, mu, re, j2, use_j2, use_drag, ballistic, h0, rho0, scale)
        if not ok:
            return False
        for k in range(n):
            for d in range(3):
                v = x[k, d + 3]
                # position slopes are v, v + dt/2 a1, v + dt/2 a2, v + dt a3
                x[k, d] += dt / 6.0 * (6.0 * v + dt * (k1[k, d] + k2[k, d] + k3[k, d]))
                x[k, d + 3] += dt / 6.0 * (k1[k, d] + 2.0 * k2[k, d] + 2.0 * k3[k, d] + k4[k, d])
    return True


def _force_args(cfg: ForceConfig, bstar: float):
    h0, rho0, scale = cfg._tables
    return (cfg.mu, cfg.re_equatorial, cfg.j2, cfg.use_j2, cfg.use_drag,
            cfg.ballistic(bstar), h0, rho0, scale)


def acceleration(s, cfg: ForceConfig, bstar: float) -> np.ndarray:
    """Total acceleration (m/s^2) at one state."""
    x = _as_vec(s).reshape(1, 6).copy()
    out = np.empty((1, 3))
    if not _accel_into(x, out, *_force_args(cfg, bstar)):
        raise BelowModelFloor("state below atmosphere floor")
    return out[0]


def propagate_batch(states: np.ndarray, dt: float, cfg: ForceConfig, bstar: float,
                    max_step: float = 60.0) -> np.ndarray:
    """Propagate an (N, 6) array of states by ``dt`` seconds.

    The interval is split into equal RK4 steps no longer than ``max_step``.
    """
    if not math.isfinite(dt):
        raise ValueError("dt must be finite")
    if not max_step > 0:
        raise ValueError("max_step must be positive")
    x = np.array(states, dtype=float, order="C", copy=True)
    squeeze = x.ndim == 1
    x = x.reshape(-1, 6)
    if dt != 0.0:
        n_steps = max(1, math.ceil(abs(dt) / max_step - 1e-12))
        if not _rk4_batch(x, dt / n_steps, n_steps, *_force_args(cfg, bstar)):
            raise BelowModelFloor("trajectory fell below the atmosphere floor")
    return x[0] if squeeze else x


def rk4_step(s, dt: float, cfg: ForceConfig, bstar: float) -> EciState:
    """Single classical Runge-Kutta step of size ``dt``."""
    x = _as_vec(s).reshape(1, 6).copy()
    if dt != 0.0:
        if not math.isfinite(dt):
            raise ValueError("dt must be finite")
        if not _rk4_batch(x, float(dt), 1, *_force_args(cfg, bstar)):
            raise BelowModelFloor("trajectory fell below the atmosphere floor")
    return EciState.from_array(x[0])


def propagate(s, t0: float, t1: float, cfg: ForceConfig, bstar: float,
              max_step: float = 60.0) -> EciState:
    """Propagate a state from ``t0`` to ``t1`` (seconds)."""
    return EciState.from_array(propagate_batch(_as_vec(s), t1 - t0, cfg, bstar, max_step))


def specific_energy(s, mu: float = MU_EARTH) -> float:
    x = _as_vec(s)
    return 0.5 * float(x[3:] @ x[3:]) - mu / float(np.linalg.norm(x[:3]))
