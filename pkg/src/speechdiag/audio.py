"""Mono audio buffers, WAV I/O and level measurements.

Samples are float64 in [-1, 1]; quantization happens only when a file is
written.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import wave
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.io import wavfile

from .errors import ValidationError

PathLike = Union[str, os.PathLike]

#: rms_db of an all-zero buffer.
SILENT = float("-inf")
#: measure_snr when the two signals are identical.
INFINITE_SNR = float("inf")


class AudioError(ValidationError):
    pass


class UnsupportedFormat(AudioError):
    pass


class EmptyAudio(AudioError):
    pass


class SampleOutOfRange(AudioError):
    pass


class LengthMismatch(AudioError):
    pass


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise AudioError(f"AudioBuffer must be mono (1-D), got shape {arr.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0

    def digest(self) -> str:
        """SHA-256 over the rate and raw float64 samples."""
        h = hashlib.sha256()
        h.update(struct.pack("<q", self.sample_rate))
        h.update(np.ascontiguousarray(self.samples, dtype="<f8").tobytes())
        return h.hexdigest()

    def with_samples(self, samples: np.ndarray) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate)


def file_digest(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_wav(path: PathLike) -> AudioBuffer:
    """Read a PCM16 or float32 WAV with one or two channels.

    Stereo is averaged down to mono; PCM16 is scaled by 1/32768.
    """
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, struct.error) as exc:
        raise UnsupportedFormat(f"{path}: cannot decode WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormat(f"{path}: unsupported sample type {data.dtype}; need PCM16 or float32")
    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise UnsupportedFormat(f"{path}: {samples.shape[1]} channels; at most 2 supported")
        samples = samples.mean(axis=1)
    if samples.shape[0] == 0:
        raise EmptyAudio(f"{path}: WAV has no sample data")
    return AudioBuffer(samples, rate)


def write_wav(buffer: AudioBuffer, path: PathLike) -> None:
    """Write ``buffer`` as mono PCM16. Out-of-range samples are rejected."""
    x = buffer.samples
    if len(x) and (np.max(np.abs(x)) > 1.0 or not np.all(np.isfinite(x))):
        raise SampleOutOfRange(f"samples outside [-1, 1] (peak {np.max(np.abs(x)):.6g})")
    # round-to-nearest; +1.0 maps to the largest code
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(buffer.sample_rate)
        w.writeframes(pcm.tobytes())


def rms_db(buffer: AudioBuffer) -> float:
    """RMS level in dBFS; :data:`SILENT` for an all-zero buffer."""
    if len(buffer) == 0:
        raise EmptyAudio("rms_db of an empty buffer")
    ms = float(np.mean(np.square(buffer.samples)))
    if ms == 0.0:
        return SILENT
    return 10.0 * math.log10(ms)


def measure_snr(clean: AudioBuffer, noisy: AudioBuffer) -> float:
    """SNR of ``noisy`` relative to ``clean`` in dB."""
    if len(clean) != len(noisy) or clean.sample_rate != noisy.sample_rate:
        raise LengthMismatch(
            f"clean ({len(clean)} @ {clean.sample_rate} Hz) and noisy "
            f"({len(noisy)} @ {noisy.sample_rate} Hz) differ"
        )
    signal = float(np.sum(np.square(clean.samples)))
    if signal == 0.0:
        raise AudioError("clean signal is silent; SNR undefined")
    noise = float(np.sum(np.square(noisy.samples - clean.samples)))
    if noise == 0.0:
        return INFINITE_SNR
    return 10.0 * math.log10(signal / noise)


def stretch_to_length(samples: np.ndarray, new_len: int) -> np.ndarray:
    """Linearly interpolate ``samples`` onto ``new_len`` evenly spaced points.

    Output point i sits at input position i * len/new_len, so both arrays
    cover the same time span.
    """
    n = samples.shape[0]
    if new_len == n:
        return samples.copy()
    if n == 0 or new_len == 0:
        return np.zeros(new_len)
    pos = np.arange(new_len) * (n / new_len)
    return np.interp(pos, np.arange(n), samples)


def resample(buffer: AudioBuffer, new_rate: int) -> AudioBuffer:
    """Linear-interpolation resampling to ``new_rate`` Hz."""
    if new_rate <= 0 or int(new_rate) != new_rate:
        raise AudioError(f"new_rate must be a positive integer, got {new_rate!r}")
    new_rate = int(new_rate)
    if new_rate == buffer.sample_rate:
        return buffer
    new_len = int(round(len(buffer) * new_rate / buffer.sample_rate))
    return AudioBuffer(stretch_to_length(buffer.samples, new_len), new_rate)

