"""Pipeline configuration: INI sections mapped onto the per-module config dataclasses."""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field

from .cascade import PhysicsConfig
from .dynamics import ForceConfig
from .errors import ConfigError
from .features import ClipBounds
from .imm import DEFAULT_MODES, ImmConfig, ImmFilter, ModeConfig, ObsNoise, UkfConfig
from .rules import RuleThresholds
from .windowing import DEFAULT_STRIDE, DEFAULT_T

CONFIG_ENV = "TLECASCADE_CONFIG"


@dataclass(frozen=True)
class WindowConfig:
    T: int = DEFAULT_T
    stride: int = DEFAULT_STRIDE

    def __post_init__(self):
        if self.T <= 0 or self.stride <= 0:
            raise ValueError("T and stride must be positive")


@dataclass(frozen=True)
class SplitConfig:
    seed: int = 0
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must be three numbers summing to 1")


@dataclass(frozen=True)
class ModesConfig:
    """Per-mode (sigma_pos m, sigma_vel m/s); M2's noise is altitude-scaled."""

    m0: tuple[float, float] = (DEFAULT_MODES[0].sigma_pos, DEFAULT_MODES[0].sigma_vel)
    m1: tuple[float, float] = (DEFAULT_MODES[1].sigma_pos, DEFAULT_MODES[1].sigma_vel)
    m2: tuple[float, float] = (DEFAULT_MODES[2].sigma_pos, DEFAULT_MODES[2].sigma_vel)

    def build(self) -> tuple[ModeConfig, ...]:
        return (ModeConfig("M0", *self.m0), ModeConfig("M1", *self.m1),
                ModeConfig("M2", *self.m2, altitude_scaled=True))


@dataclass(frozen=True)
class CascadeSection:
    ecc_decay: float = 1.0


@dataclass(frozen=True)
class IoConfig:
    archives: tuple[str, ...] = ()
    supgp_archives: tuple[str, ...] = ()
    output: str = ""


# section name -> (attribute on PipelineConfig, dataclass)
SECTIONS: dict[str, tuple[str, type]] = {
    "force": ("force", ForceConfig),
    "rules": ("rules", RuleThresholds),
    "ukf": ("ukf", UkfConfig),
    "imm": ("imm", ImmConfig),
    "modes": ("modes", ModesConfig),
    "noise": ("noise", ObsNoise),
    "features": ("clip", ClipBounds),
    "windows": ("windows", WindowConfig),
    "split": ("split", SplitConfig),
    "cascade": ("cascade", CascadeSection),
    "io": ("io", IoConfig),
}


@dataclass(frozen=True)
class PipelineConfig:
    force: ForceConfig = field(default_factory=ForceConfig)
    rules: RuleThresholds = field(default_factory=RuleThresholds)
    ukf: UkfConfig = field(default_factory=UkfConfig)
    imm: ImmConfig = field(default_factory=ImmConfig)
    modes: ModesConfig = field(default_factory=ModesConfig)
    noise: ObsNoise = field(default_factory=ObsNoise)
    clip: ClipBounds = field(default_factory=ClipBounds)
    windows: WindowConfig = field(default_factory=WindowConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    cascade: CascadeSection = field(default_factory=CascadeSection)
    io: IoConfig = field(default_factory=IoConfig)

    def imm_filter(self) -> ImmFilter:
        return ImmFilter(self.imm, self.ukf, self.modes.build(), self.noise, self.force)

    def physics(self) -> PhysicsConfig:
        return PhysicsConfig(self.force, self.cascade.ecc_decay)

    # -------------------------------------------------------- text form
    @classmethod
    def from_string(cls, text: str, origin: str = "<string>") -> "PipelineConfig":
        cp = configparser.ConfigParser(interpolation=None, default_section="\x00unused")
        cp.optionxform = str  # keep key case (e.g. the window length T)
        try:
            cp.read_string(text, source=origin)
        except configparser.Error as exc:
            raise ConfigError(f"{origin}: {exc}") from exc
        base = cls()
        kwargs = {}
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{origin}: unknown section [{section}]")
            attr, klass = SECTIONS[section]
            current = getattr(base, attr)
            names = {f.name for f in dataclasses.fields(klass) if f.init}
            updates = {}
            for key, raw in cp.items(section):
                if key not in names:
                    raise ConfigError(f"{origin}: unknown key '{key}' in [{section}]")
                try:
                    updates[key] = _coerce(raw, getattr(current, key))
                except ValueError as exc:
                    raise ConfigError(f"{origin}: [{section}] {key}: {exc}") from exc
            try:
                kwargs[attr] = dataclasses.replace(current, **updates)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{origin}: [{section}]: {exc}") from exc
        return dataclasses.replace(base, **kwargs)

    @classmethod
    def load(cls, path: str | os.PathLike | None = None) -> "PipelineConfig":
        """Load ``path``, else the file named by the environment, else defaults."""
        path = path or os.environ.get(CONFIG_ENV)
        if not path:
            return cls()
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_string(text, os.fspath(path))

    def dumps(self) -> str:
        """Fully resolved configuration in the same INI syntax."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, (attr, klass) in SECTIONS.items():
            obj = getattr(self, attr)
            cp[section] = {f.name: _format(getattr(obj, f.name))
                           for f in dataclasses.fields(klass) if f.init}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


# ------------------------------------------------------------ value codec
def _coerce(text: str, default):
    """Parse ``text`` into the shape of ``default``.

    Lists are comma separated; a list of lists separates rows with ';'.
    """
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, str):
        return text
    if isinstance(default, tuple):
        if default and isinstance(default[0], tuple):
            rows = [r for r in text.replace("\n", ";").split(";") if r.strip()]
            return tuple(tuple(float(v) for v in r.split(",")) for r in rows)
        items = [s.strip() for s in text.replace("\n", ",").split(",") if s.strip()]
        if not default or isinstance(default[0], str):
            return tuple(items)
        return tuple(float(v) for v in items)
    raise ValueError(f"unsupported option type {type(default).__name__}")


def _format(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(", ".join(repr(v) for v in row) for row in value)
        return ", ".join(v if isinstance(v, str) else repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
