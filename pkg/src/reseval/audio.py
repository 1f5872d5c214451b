"""Waveform container, 16 kHz mono WAV I/O, and energy primitives."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
ENERGY_FLOOR = 1e-12
INT16_SCALE = 32768.0
MIX_TOL = 1e-6


class WavFormatError(ValueError):
    """WAV file with an unsupported or malformed format."""


class TruncatedWavError(OSError):
    """WAV file ends before its declared payload."""


@dataclass(frozen=True)
class Signal:
    """Mono waveform at 16 kHz, samples stored as read-only float64.

    Samples are dimensionless amplitudes, nominal full scale +-1.0.
    Instances are immutable and safe to share across threads.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"signal must be 1-D, got shape {arr.shape}")
        if arr.size < 1:
            raise ValueError("signal must contain at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(
                f"sample rate {self.sample_rate} unsupported ({SAMPLE_RATE} Hz required)"
            )
        if arr is self.samples:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SceneComponents:
    """Aligned signal set for one scene.

    s: near-end desired speech; x: far-end reference; y: reverberant
    nonlinear echo; w: additive noise; m: microphone; y_hat: AEC echo
    estimate; e: AEC output; s_hat: suppressor output.  Only s is
    mandatory; metric evaluation additionally needs e and s_hat.
    """

    s: Signal
    x: Signal | None = None
    y: Signal | None = None
    w: Signal | None = None
    m: Signal | None = None
    y_hat: Signal | None = None
    e: Signal | None = None
    s_hat: Signal | None = None

    def __post_init__(self):
        ref = len(self.s)
        for name, sig in self.present().items():
            if len(sig) != ref:
                raise ValueError(
                    f"component '{name}' has length {len(sig)}, expected {ref}"
                )
            if sig.sample_rate != self.s.sample_rate:
                raise ValueError(f"component '{name}' sample rate mismatch")
        if self.y is not None and self.w is not None and self.m is not None:
            mix = self.s.samples + self.y.samples + self.w.samples
            err = np.max(np.abs(mix - self.m.samples))
            if err > MIX_TOL:
                raise ValueError(
                    f"m != s + y + w (max deviation {err:.3e} > {MIX_TOL})"
                )
        if self.m is not None and self.y_hat is not None and self.e is not None:
            err = np.max(np.abs(self.m.samples - self.y_hat.samples - self.e.samples))
            if err > MIX_TOL:
                raise ValueError(
                    f"e != m - y_hat (max deviation {err:.3e} > {MIX_TOL})"
                )

    def present(self) -> dict[str, Signal]:
        out = {}
        for name in ("s", "x", "y", "w", "m", "y_hat", "e", "s_hat"):
            sig = getattr(self, name)
            if sig is not None:
                out[name] = sig
        return out


def energy_db(samples) -> float:
    """10*log10 of the summed squared amplitude, floored at 1e-12."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("energy_db: empty input")
    if not np.all(np.isfinite(arr)):
        raise ValueError("energy_db: non-finite input")
    return float(10.0 * np.log10(float(np.dot(arr, arr)) + ENERGY_FLOOR))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write a file atomically (temp file in the same directory + rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_wav(path) -> Signal:
    """Read a mono 16 kHz WAV file (16-bit PCM or 32-bit float).

    16-bit samples are scaled by 1/32768 into the +-1.0 range; float
    samples pass through unchanged.  Anything else is rejected with an
    error naming the offending property.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise TruncatedWavError(f"{path}: file too short for a RIFF header")
    if data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt_chunk = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        pos += 8
        chunk = data[pos : pos + size]
        if len(chunk) < size:
            raise TruncatedWavError(
                f"{path}: chunk {cid!r} declares {size} bytes, {len(chunk)} available"
            )
        if cid == b"fmt ":
            fmt_chunk = chunk
        elif cid == b"data":
            payload = chunk
        pos += size + (size & 1)

    if fmt_chunk is None or len(fmt_chunk) < 16:
        raise WavFormatError(f"{path}: missing or short fmt chunk")
    if payload is None:
        raise TruncatedWavError(f"{path}: missing data chunk")

    tag, channels, rate, _byterate, _align, bits = struct.unpack_from(
        "<HHIIHH", fmt_chunk, 0
    )
    if channels != 1:
        raise WavFormatError(f"{path}: channel count {channels} unsupported (mono required)")
    if rate != SAMPLE_RATE:
        raise WavFormatError(
            f"{path}: sample rate {rate} unsupported ({SAMPLE_RATE} Hz required)"
        )
    if tag == 1 and bits == 16:
        if len(payload) % 2:
            raise TruncatedWavError(f"{path}: data chunk not a whole number of samples")
        arr = np.frombuffer(payload, dtype="<i2").astype(np.float64) / INT16_SCALE
    elif tag == 3 and bits == 32:
        if len(payload) % 4:
            raise TruncatedWavError(f"{path}: data chunk not a whole number of samples")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: encoding unsupported (format tag {tag}, {bits}-bit; "
            f"need 16-bit PCM or 32-bit float)"
        )
    return Signal(arr)


def save_wav(signal: Signal, path) -> None:
    """Write a Signal as mono 32-bit float WAV, atomically."""
    if not isinstance(signal, Signal):
        raise TypeError("save_wav expects a Signal")
    payload = signal.samples.astype("<f4").tobytes()
    fmt = struct.pack("<HHIIHH", 3, 1, SAMPLE_RATE, SAMPLE_RATE * 4, 4, 32)
    body = b"".join(
        [
            b"WAVE",
            b"fmt ", struct.pack("<I", len(fmt)), fmt,
            b"fact", struct.pack("<II", 4, len(signal)),
            b"data", struct.pack("<I", len(payload)), payload,
        ]
    )
    blob = b"RIFF" + struct.pack("<I", len(body)) + body
    atomic_write_bytes(path, blob)
