"""Epoch records, the HEEG1 file format, and a synthetic EEG-epoch generator.

HEEG1 layout (little-endian)::

    b"HEEG1"  u16 C  u32 T  u16 D (=1)  u32 n_records
    n_records x C x T float32, row-major
    n_records label bytes (codes 0..4)

Signals are float32 on disk and float64 in memory.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .seeding import stream
from .stages import N_STAGES, SleepStage

MAGIC = b"HEEG1"
_HEADER = struct.Struct("<HIHI")
HEADER_SIZE = len(MAGIC) + _HEADER.size


class DatasetFormatError(ValueError):
    pass


class BadMagicError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


class LengthMismatchError(DatasetFormatError):
    pass


class HeaderError(DatasetFormatError):
    pass


@dataclass
class EpochRecord:
    signal: np.ndarray  # C x T x 1
    label: SleepStage

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if self.signal.ndim == 2:
            self.signal = self.signal[:, :, None]
        if self.signal.ndim != 3 or min(self.signal.shape) < 1:
            raise ValueError(f"signal must be C x T x 1 with C, T >= 1, got {self.signal.shape}")
        if not np.all(np.isfinite(self.signal)):
            raise ValueError("signal contains non-finite values")
        self.label = SleepStage(int(self.label))


@dataclass(frozen=True)
class DatasetHeader:
    channels: int
    timesteps: int
    depth: int
    n_records: int


def stack(records: Sequence[EpochRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Records as ``(n, C, T, D)`` signals and ``(n,)`` integer labels."""
    if not records:
        raise ValueError("no records")
    x = np.stack([r.signal for r in records])
    y = np.array([int(r.label) for r in records], dtype=np.int64)
    return x, y


def _header_shape(records: Sequence[EpochRecord]) -> tuple[int, int, int]:
    shapes = {r.signal.shape for r in records}
    if len(shapes) != 1:
        raise ValueError(f"records have mixed shapes: {sorted(shapes)}")
    C, T, D = shapes.pop()
    if D != 1:
        raise ValueError(f"HEEG1 stores D=1 only, got D={D}")
    return C, T, D


def dumps(records: Sequence[EpochRecord]) -> bytes:
    if not records:
        raise ValueError("cannot write an empty dataset")
    C, T, D = _header_shape(records)
    if C > 0xFFFF or T > 0xFFFFFFFF:
        raise ValueError(f"C={C} or T={T} exceeds header field width")
    x, y = stack(records)
    return b"".join([
        MAGIC,
        _HEADER.pack(C, T, D, len(records)),
        np.ascontiguousarray(x.reshape(len(records), C, T), dtype="<f4").tobytes(),
        y.astype(np.uint8).tobytes(),
    ])


def read_header(buf: bytes) -> DatasetHeader:
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError("bad magic: not a HEEG1 file")
    if len(buf) < HEADER_SIZE:
        raise TruncatedFileError(f"header needs {HEADER_SIZE} bytes, file has {len(buf)}")
    C, T, D, n = _HEADER.unpack_from(buf, len(MAGIC))
    if D != 1:
        raise HeaderError(f"unsupported depth D={D} (HEEG1 requires D=1)")
    if C == 0 or T == 0:
        raise HeaderError(f"header has zero extent: C={C}, T={T}")
    return DatasetHeader(C, T, D, n)


def loads(buf: bytes) -> list[EpochRecord]:
    head = read_header(buf)
    C, T, n = head.channels, head.timesteps, head.n_records
    expected = HEADER_SIZE + n * C * T * 4 + n
    if len(buf) < expected:
        raise TruncatedFileError(f"header promises {expected} bytes, file has {len(buf)}")
    if len(buf) > expected:
        raise LengthMismatchError(f"header promises {expected} bytes, file has {len(buf)}")
    payload = np.frombuffer(buf, dtype="<f4", count=n * C * T, offset=HEADER_SIZE)
    labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=HEADER_SIZE + n * C * T * 4)
    if n and labels.max() >= N_STAGES:
        bad = int(np.argmax(labels >= N_STAGES))
        raise LabelRangeError(f"record {bad} has label byte {labels[bad]} (valid: 0..{N_STAGES - 1})")
    if not np.all(np.isfinite(payload)):
        raise DatasetFormatError("payload contains non-finite values")
    signals = payload.astype(np.float64).reshape(n, C, T, 1)
    return [EpochRecord(signals[i], SleepStage(int(labels[i]))) for i in range(n)]


def write_dataset(records: Sequence[EpochRecord], path: str | Path) -> None:
    Path(path).write_bytes(dumps(records))


def read_dataset(path: str | Path) -> list[EpochRecord]:
    return loads(Path(path).read_bytes())


# ---------------------------------------------------------------- synthetic data


@dataclass
class SynthSpec:
    channels: int
    timesteps: int
    n_records: int
    seed: int = 0
    class_balance: Sequence[float] = field(default_factory=lambda: [0.2] * N_STAGES)
    spatial_coupling: float = 1.0
    temporal_signature: float = 1.0
    noise_std: float = 0.1

    def validate(self) -> None:
        if self.channels < 1 or self.timesteps < 1:
            raise ValueError(f"channels and timesteps must be >= 1, got {self.channels}, {self.timesteps}")
        if self.channels > 0xFFFF:
            raise ValueError(f"channels must fit in u16, got {self.channels}")
        if self.n_records < 1:
            raise ValueError(f"n_records must be >= 1, got {self.n_records}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        bal = np.asarray(self.class_balance, dtype=np.float64)
        if bal.shape != (N_STAGES,) or np.any(bal < 0) or abs(bal.sum() - 1.0) > 1e-9:
            raise ValueError(f"class_balance must be {N_STAGES} non-negative values summing to 1")
        for name in ("spatial_coupling", "temporal_signature"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


def class_frequency(k: int) -> int:
    """Cycles per epoch of the temporal template for stage code ``k``."""
    return 2 * (k + 1)


def temporal_template(k: int, channels: int, timesteps: int) -> np.ndarray:
    """``C x T`` sinusoid at the class frequency, phase-staggered across channels.

    The stagger keeps the pattern from being a common mode across channels,
    which a per-time-slice layer norm would erase.
    """
    t = np.arange(timesteps) / timesteps
    phase = 2 * math.pi * np.arange(channels) / channels
    return np.sin(2 * math.pi * class_frequency(k) * t[None, :] + phase[:, None])


def spatial_pattern(k: int, channels: int) -> np.ndarray:
    """Unit-norm channel loading for stage ``k`` (a cosine basis vector)."""
    c = np.arange(channels)
    u = np.cos(math.pi * (k + 1) * (c + 0.5) / channels)
    norm = np.linalg.norm(u)
    return u / norm if norm > 1e-12 else np.full(channels, 1.0 / math.sqrt(channels))


def generate_synthetic(spec: SynthSpec) -> list[EpochRecord]:
    """Seeded records with class structure in time and across channels.

    Each record of class ``k`` is

        temporal_signature * template_k
        + spatial_coupling * sqrt(C) * u_k z^T
        + noise_std * white noise

    where ``z`` is a per-record random-phase sinusoid at one cycle per epoch,
    so the spatial part carries class identity only through the channel
    correlation pattern ``u_k``.
    """
    spec.validate()
    C, T, n = spec.channels, spec.timesteps, spec.n_records
    rng = stream(spec.seed, "synth")
    labels = rng.choice(N_STAGES, size=n, p=np.asarray(spec.class_balance, dtype=np.float64))
    phases = rng.uniform(0.0, 2 * math.pi, size=n)
    noise = rng.standard_normal((n, C, T))
    t = np.arange(T) / T
    templates = np.stack([temporal_template(k, C, T) for k in range(N_STAGES)])
    patterns = np.stack([spatial_pattern(k, C) for k in range(N_STAGES)])
    records = []
    for i in range(n):
        k = int(labels[i])
        z = np.sin(2 * math.pi * t + phases[i])
        x = spec.temporal_signature * templates[k]
        if spec.spatial_coupling:
            x = x + spec.spatial_coupling * math.sqrt(C) * np.outer(patterns[k], z)
        if spec.noise_std:
            x = x + spec.noise_std * noise[i]
        records.append(EpochRecord(x[:, :, None], SleepStage(k)))
    return records


def class_histogram(records: Sequence[EpochRecord]) -> dict[SleepStage, int]:
    counts = {s: 0 for s in SleepStage}
    for r in records:
        counts[r.label] += 1
    return counts
