"""Fixed-length windows, window-level splits and the binary dataset file."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .features import DT_HOURS, EPOCH_H, N_FEATURES, NormStats

DEFAULT_T = 50
DEFAULT_STRIDE = 25

MAGIC = b"TLECWIN\x00"
VERSION = 1
# magic, version, N, T, F, seed, stats digest, number of label tiers
_HEADER = struct.Struct("<8sIQIIQ32sI")
_TIER_NAME = struct.Struct("<16s")


class Split(str, Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


@dataclass
class Window:
    norad_id: int
    start: int
    data: np.ndarray  # (T, F)
    labels: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def key(self) -> tuple[int, int]:
        return self.norad_id, self.start


def window_count(n: int, T: int = DEFAULT_T, stride: int = DEFAULT_STRIDE) -> int:
    return 0 if n < T else (n - T) // stride + 1


def make_windows(seq: np.ndarray, norad_id: int, T: int = DEFAULT_T,
                 stride: int = DEFAULT_STRIDE,
                 labels: Mapping[str, np.ndarray] | None = None) -> list[Window]:
    """Slice one satellite's (N, F) feature sequence into self-contained windows.

    Each window's ``epoch_h`` is shifted to start at 0 and its leading
    ``dt_hours`` is reset to 0.
    """
    if T <= 0 or stride <= 0:
        raise ValueError("T and stride must be positive")
    seq = np.asarray(seq, dtype=float)
    labels = labels or {}
    out = []
    for k in range(window_count(len(seq), T, stride)):
        s = k * stride
        w = seq[s:s + T].copy()
        w[:, EPOCH_H] -= w[0, EPOCH_H]
        w[0, DT_HOURS] = 0.0
        lab = {tier: np.asarray(v[s:s + T], dtype=np.uint8) for tier, v in labels.items()}
        out.append(Window(norad_id, s, w, lab))
    return out


def split_unit(norad_id: int, start: int, seed: int) -> float:
    """Seeded hash of a window identity mapped to [0, 1)."""
    key = struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF)
    h = hashlib.blake2b(struct.pack("<qq", norad_id, start), digest_size=8, key=key)
    return int.from_bytes(h.digest(), "little") / 2.0**64


def split_of(norad_id: int, start: int, seed: int,
             fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> Split:
    u = split_unit(norad_id, start, seed)
    if u < fractions[0]:
        return Split.TRAIN
    if u < fractions[0] + fractions[1]:
        return Split.VAL
    return Split.TEST


@dataclass
class SplitAssignment:
    seed: int
    assignment: dict[tuple[int, int], Split]

    def members(self, split: Split) -> list[tuple[int, int]]:
        return [k for k, v in self.assignment.items() if v is split]

    def fractions(self) -> dict[Split, float]:
        n = len(self.assignment)
        return {s: len(self.members(s)) / n for s in Split}


def assign_splits(windows: Sequence[Window] | Sequence[tuple[int, int]], seed: int,
                  fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> SplitAssignment:
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    keys = [w.key if isinstance(w, Window) else tuple(w) for w in windows]
    return SplitAssignment(seed, {k: split_of(k[0], k[1], seed, fractions) for k in keys})


# ------------------------------------------------------------ dataset file
@dataclass
class Dataset:
    version: int
    seed: int
    stats_digest: bytes
    data: np.ndarray  # (N, T, F) float32
    labels: dict[str, np.ndarray]  # tier -> (N, T) uint8

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def write_dataset(path: str | os.PathLike, windows: Sequence[Window], stats: NormStats,
                  seed: int, tiers: Sequence[str] = (), normalize: bool = True) -> None:
    """Write windows as header + float32 LE tensors + uint8 label blocks.

    The header carries an extra tier count and 16-byte tier names so the
    optional label blocks can be located.
    """
    T = windows[0].data.shape[0] if windows else 0
    block = np.empty((len(windows), T, N_FEATURES), dtype="<f4")
    for i, w in enumerate(windows):
        block[i] = stats.normalize(w.data) if normalize else w.data
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(windows), T, N_FEATURES, seed,
                              stats.digest(), len(tiers)))
        for tier in tiers:
            fh.write(_TIER_NAME.pack(tier.encode()))
        fh.write(block.tobytes(order="C"))
        for tier in tiers:
            lab = np.zeros((len(windows), T), dtype=np.uint8)
            for i, w in enumerate(windows):
                lab[i] = w.labels[tier]
            fh.write(lab.tobytes())


def read_dataset(path: str | os.PathLike) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n, T, F, seed, digest, n_tiers = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a window dataset")
    off = _HEADER.size
    tiers = []
    for _ in range(n_tiers):
        tiers.append(_TIER_NAME.unpack_from(raw, off)[0].rstrip(b"\x00").decode())
        off += _TIER_NAME.size
    size = n * T * F * 4
    data = np.frombuffer(raw, dtype="<f4", count=n * T * F, offset=off).reshape(n, T, F)
    off += size
    labels = {}
    for tier in tiers:
        labels[tier] = np.frombuffer(raw, dtype=np.uint8, count=n * T, offset=off).reshape(n, T)
        off += n * T
    return Dataset(version, seed, digest, data, labels)
