"""Parameterized degradations for targeted negative synthesis.

Every operation returns ``(new_buffer, PerturbationRecord)``. The record names
the dimension the degradation attacks and the score band it is meant to land
in, and carries enough parameters (plus seed) to replay the transformation
bit-exactly with :func:`replay`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.signal import get_window

from .audio import AudioBuffer, AudioError, read_wav, stretch_to_length
from .errors import ValidationError

# Dimension ids (canonical schema order).
PRONUNCIATION = 1
AUDIO_CLARITY = 2
INTONATION = 3
PAUSES = 4
SPEECH_RATE = 5
SPEAKER_CONSISTENCY = 6
STYLE_CONSISTENCY = 7

CROSSFADE_S = 0.005
_LIMIT_KNEE = 0.9


class PerturbationError(ValidationError):
    pass


class PlanStepError(PerturbationError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"plan step {index} failed: {cause}")
        self.index = index
        self.cause = cause


def _scale_bounds(dimension_id: int) -> tuple[int, int]:
    return (1, 5) if dimension_id <= 8 else (0, 2)


@dataclass(frozen=True)
class PerturbationRecord:
    kind: str
    params: Mapping[str, Any]
    target_dimension: int
    target_score_band: tuple
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.target_score_band
        smin, smax = _scale_bounds(self.target_dimension)
        if not (smin <= lo <= hi <= smax):
            raise PerturbationError(
                f"band {lo}..{hi} outside scale {smin}..{smax} of dimension {self.target_dimension}"
            )
        object.__setattr__(self, "target_score_band", (int(lo), int(hi)))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "target_dimension": self.target_dimension,
            "target_score_band": list(self.target_score_band),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PerturbationRecord":
        return cls(
            kind=d["kind"],
            params=dict(d.get("params", {})),
            target_dimension=int(d["target_dimension"]),
            target_score_band=tuple(d["target_score_band"]),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class PlanStep:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0


def _soft_limit(x: np.ndarray) -> np.ndarray:
    """Identity below the knee, tanh-compressed into (knee, 1) above it."""
    mag = np.abs(x)
    over = mag > _LIMIT_KNEE
    if not np.any(over):
        return x
    head = 1.0 - _LIMIT_KNEE
    y = x.copy()
    y[over] = np.sign(x[over]) * (_LIMIT_KNEE + head * np.tanh((mag[over] - _LIMIT_KNEE) / head))
    return y


def _index(buf: AudioBuffer, t_s: float) -> int:
    return int(round(t_s * buf.sample_rate))


def _require_within(buf: AudioBuffer, at_s: float, what: str = "at_s") -> None:
    if not (0.0 <= at_s <= buf.duration_s):
        raise PerturbationError(f"{what}={at_s} outside buffer of {buf.duration_s:.4f} s")


# ---------------------------------------------------------------- audio quality


def add_white_noise(buf: AudioBuffer, snr_db: float, seed: int):
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise PerturbationError(f"snr_db must be finite or +inf, got {snr_db}")
    band = (4, 4) if snr_db >= 20 else (3, 3) if snr_db >= 10 else (2, 2)
    record = PerturbationRecord("add_white_noise", {"snr_db": float(snr_db)}, AUDIO_CLARITY, band, seed)
    if snr_db == math.inf:
        return buf, record
    x = buf.samples
    signal_energy = float(np.sum(np.square(x)))
    if signal_energy == 0.0:
        raise PerturbationError("cannot add noise at a target SNR to a silent buffer")
    noise = np.random.default_rng(seed).standard_normal(len(x))
    # scale the realized draw, not its expectation, so the SNR is exact pre-limiting
    target = signal_energy / 10.0 ** (snr_db / 10.0)
    noise *= math.sqrt(target / float(np.sum(np.square(noise))))
    return buf.with_samples(_soft_limit(x + noise)), record


def add_hum(buf: AudioBuffer, freq_hz: float, level_dbfs: float):
    nyquist = buf.sample_rate / 2
    if not (0 < freq_hz < nyquist):
        raise PerturbationError(f"hum frequency {freq_hz} Hz not in (0, {nyquist})")
    band = (4, 4) if level_dbfs <= -30 else (3, 3)
    record = PerturbationRecord(
        "add_hum", {"freq_hz": float(freq_hz), "level_dbfs": float(level_dbfs)}, AUDIO_CLARITY, band
    )
    if level_dbfs == -math.inf:
        return buf, record
    amp = math.sqrt(2.0) * 10.0 ** (level_dbfs / 20.0)
    t = np.arange(len(buf)) / buf.sample_rate
    hum = amp * np.sin(2 * np.pi * freq_hz * t)
    return buf.with_samples(_soft_limit(buf.samples + hum)), record


def hard_clip(buf: AudioBuffer, threshold_frac: float):
    if not (0 < threshold_frac <= 1):
        raise PerturbationError(f"threshold_frac must be in (0, 1], got {threshold_frac}")
    band = (2, 2) if threshold_frac <= 0.5 else (3, 3) if threshold_frac <= 0.8 else (4, 4)
    record = PerturbationRecord("hard_clip", {"threshold_frac": float(threshold_frac)}, AUDIO_CLARITY, band)
    if threshold_frac == 1:
        return buf, record
    limit = threshold_frac * buf.peak()
    return buf.with_samples(np.clip(buf.samples, -limit, limit)), record


def inject_pops(buf: AudioBuffer, rate_per_s: float, amplitude: float, seed: int):
    if rate_per_s < 0:
        raise PerturbationError(f"rate_per_s must be >= 0, got {rate_per_s}")
    if not (0 < amplitude <= 1):
        raise PerturbationError(f"amplitude must be in (0, 1], got {amplitude}")
    band = (2, 2) if rate_per_s >= 2 else (3, 3)
    record = PerturbationRecord(
        "inject_pops", {"rate_per_s": float(rate_per_s), "amplitude": float(amplitude)},
        AUDIO_CLARITY, band, seed,
    )
    if rate_per_s == 0 or len(buf) == 0:
        return buf, record
    rng = np.random.default_rng(seed)
    count = min(int(rng.poisson(rate_per_s * buf.duration_s)), len(buf))
    positions = np.sort(rng.choice(len(buf), size=count, replace=False))
    signs = rng.choice(np.array([-1.0, 1.0]), size=count)
    y = buf.samples.copy()
    y[positions] = signs * amplitude
    return buf.with_samples(y), record


# ---------------------------------------------------------------- rhythm / prosody


def _rate_band(factor: float) -> tuple[int, int]:
    if factor < 0.8 or factor > 1.25:
        return (2, 2)
    if factor <= 0.9 or factor >= 1.1:
        return (3, 3)
    return (4, 4)


def time_stretch(buf: AudioBuffer, factor: float):
    """Uniform warp by resampling; ``factor`` > 1 is slower. Pitch co-varies."""
    if not (0.25 <= factor <= 4):
        raise PerturbationError(f"stretch factor must be in [0.25, 4], got {factor}")
    record = PerturbationRecord("time_stretch", {"factor": float(factor)}, SPEECH_RATE, _rate_band(factor))
    if factor == 1:
        return buf, record
    new_len = int(round(len(buf) * factor))
    return buf.with_samples(stretch_to_length(buf.samples, new_len)), record


def piecewise_rate_warp(buf: AudioBuffer, boundaries_s: Sequence[float], factors: Sequence[float]):
    boundaries = [float(b) for b in boundaries_s]
    factors = [float(f) for f in factors]
    if len(factors) != len(boundaries) + 1:
        raise PerturbationError("need exactly one more factor than boundaries")
    if any(not (0 < b < buf.duration_s) for b in boundaries):
        raise PerturbationError("boundaries must lie strictly inside the buffer")
    if any(b2 <= b1 for b1, b2 in zip(boundaries, boundaries[1:])):
        raise PerturbationError("boundaries must be strictly increasing")
    if any(not (0.25 <= f <= 4) for f in factors):
        raise PerturbationError("segment factors must be in [0.25, 4]")
    jumps = [abs(b - a) for a, b in zip(factors, factors[1:])]
    band = (2, 3) if jumps and max(jumps) >= 0.3 else (3, 4)
    record = PerturbationRecord(
        "piecewise_rate_warp", {"boundaries_s": boundaries, "factors": factors}, SPEECH_RATE, band
    )
    if all(f == 1 for f in factors):
        return buf, record
    cuts = [0] + [_index(buf, b) for b in boundaries] + [len(buf)]
    pieces = []
    for (a, b), f in zip(zip(cuts, cuts[1:]), factors):
        seg = buf.samples[a:b]
        pieces.append(stretch_to_length(seg, int(round(len(seg) * f))))
    return buf.with_samples(np.concatenate(pieces)), record


def _wsola(x: np.ndarray, out_len: int, frame: int, tolerance: int) -> np.ndarray:
    """Waveform-similarity overlap-add stretch of ``x`` to ``out_len`` samples."""
    n = x.shape[0]
    if out_len == n:
        return x.copy()
    if n == 0:
        return np.zeros(out_len)
    hop_s = frame // 4
    hop_a = hop_s * n / out_len
    win = get_window("hann", frame, fftbins=True)
    pad = frame + tolerance
    xp = np.concatenate([np.zeros(tolerance), x, np.zeros(pad + int(hop_a) + frame)])
    n_frames = out_len // hop_s + 2
    out = np.zeros(n_frames * hop_s + frame)
    norm = np.zeros_like(out)
    prev = None
    for k in range(n_frames):
        nominal = int(round(k * hop_a)) + tolerance
        if prev is None:
            pos = nominal
        else:
            target = xp[prev + hop_s: prev + hop_s + frame]
            lo = max(nominal - tolerance, 0)
            hi = min(nominal + tolerance, xp.shape[0] - frame)
            region = xp[lo: hi + frame]
            scores = np.correlate(region, target, mode="valid")
            energy = np.sqrt(np.convolve(np.square(region), np.ones(frame), mode="valid")) + 1e-12
            scores = scores / energy
            # prefer the offset closest to nominal among equally good matches
            offsets = np.arange(lo, lo + scores.shape[0])
            best = np.flatnonzero(scores >= scores.max() - 1e-9)
            pos = int(offsets[best[np.argmin(np.abs(offsets[best] - nominal))]])
        out[k * hop_s: k * hop_s + frame] += win * xp[pos: pos + frame]
        norm[k * hop_s: k * hop_s + frame] += win
        prev = pos
    out = out[:out_len]
    norm = norm[:out_len]
    return np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-8)


def pitch_shift(buf: AudioBuffer, semitones: float):
    """Resample by 2**(st/12), then restore the duration with WSOLA."""
    if abs(semitones) > 12:
        raise PerturbationError(f"|semitones| must be <= 12, got {semitones}")
    band = (3, 3) if abs(semitones) <= 2 else (2, 2)
    record = PerturbationRecord("pitch_shift", {"semitones": float(semitones)}, INTONATION, band)
    if semitones == 0 or len(buf) == 0:
        return buf, record
    ratio = 2.0 ** (semitones / 12.0)
    shifted = stretch_to_length(buf.samples, max(1, int(round(len(buf) / ratio))))
    frame = 1 << max(6, int(round(math.log2(0.032 * buf.sample_rate))))
    restored = _wsola(shifted, len(buf), frame, tolerance=frame // 4)
    return buf.with_samples(np.clip(restored, -1.0, 1.0)), record


def insert_silence(buf: AudioBuffer, at_s: float, dur_s: float):
    _require_within(buf, at_s)
    if dur_s <= 0:
        raise PerturbationError(f"dur_s must be > 0, got {dur_s}")
    band = (3, 3) if dur_s <= 0.5 else (2, 2)
    record = PerturbationRecord(
        "insert_silence", {"at_s": float(at_s), "dur_s": float(dur_s)}, PAUSES, band
    )
    k = _index(buf, at_s)
    gap = np.zeros(int(round(dur_s * buf.sample_rate)))
    return buf.with_samples(np.concatenate([buf.samples[:k], gap, buf.samples[k:]])), record


def _crossfade_join(head: np.ndarray, tail: np.ndarray, fade: int) -> np.ndarray:
    """Concatenate with a linear crossfade over the last/first ``fade`` samples."""
    fade = min(fade, head.shape[0], tail.shape[0])
    if fade <= 0:
        return np.concatenate([head, tail])
    ramp = (np.arange(fade) + 0.5) / fade
    mixed = head[-fade:] * (1.0 - ramp) + tail[:fade] * ramp
    return np.concatenate([head[:-fade], mixed, tail[fade:]])


def remove_segment(buf: AudioBuffer, at_s: float, dur_s: float):
    if dur_s < 0 or at_s < 0 or at_s + dur_s > buf.duration_s + 0.5 / buf.sample_rate:
        raise PerturbationError(
            f"span [{at_s}, {at_s + dur_s}] outside buffer of {buf.duration_s:.4f} s"
        )
    band = (3, 3) if dur_s <= 0.1 else (2, 2)
    record = PerturbationRecord(
        "remove_segment", {"at_s": float(at_s), "dur_s": float(dur_s)}, PRONUNCIATION, band
    )
    a = _index(buf, at_s)
    b = min(_index(buf, at_s + dur_s), len(buf))
    if b <= a:
        return buf, record
    fade = _index(buf, CROSSFADE_S)
    return buf.with_samples(_crossfade_join(buf.samples[:a], buf.samples[b:], fade)), record


def splice_foreign(buf_a: AudioBuffer, buf_b: AudioBuffer, at_s: float,
                   other_path: Optional[str] = None):
    """Keep ``buf_a`` up to ``at_s`` then continue with ``buf_b``."""
    if buf_a.sample_rate != buf_b.sample_rate:
        raise PerturbationError(
            f"sample rate mismatch: {buf_a.sample_rate} vs {buf_b.sample_rate}"
        )
    _require_within(buf_a, at_s)
    params: dict[str, Any] = {"at_s": float(at_s), "other_digest": buf_b.digest()}
    if other_path is not None:
        params["other_path"] = str(other_path)
    record = PerturbationRecord("splice_foreign", params, SPEAKER_CONSISTENCY, (2, 3))
    head = buf_a.samples[: _index(buf_a, at_s)]
    fade = _index(buf_a, CROSSFADE_S)
    return buf_a.with_samples(_crossfade_join(head, buf_b.samples, fade)), record


def gain_step(buf: AudioBuffer, at_s: float, delta_db: float):
    _require_within(buf, at_s)
    band = (3, 3) if abs(delta_db) <= 6 else (2, 2)
    record = PerturbationRecord(
        "gain_step", {"at_s": float(at_s), "delta_db": float(delta_db)}, STYLE_CONSISTENCY, band
    )
    if delta_db == 0:
        return buf, record
    k = _index(buf, at_s)
    gain = 10.0 ** (delta_db / 20.0)
    y = buf.samples.copy()
    y[k:] *= gain
    if len(y) and np.max(np.abs(y)) > 1.0:
        raise PerturbationError(f"gain step of {delta_db} dB would clip (peak {np.max(np.abs(y)):.4f})")
    return buf.with_samples(y), record


# ---------------------------------------------------------------- plans / replay

_STOCHASTIC = {"add_white_noise", "inject_pops"}

KINDS: dict[str, Callable[..., tuple]] = {
    "add_white_noise": add_white_noise,
    "add_hum": add_hum,
    "hard_clip": hard_clip,
    "inject_pops": inject_pops,
    "time_stretch": time_stretch,
    "piecewise_rate_warp": piecewise_rate_warp,
    "pitch_shift": pitch_shift,
    "insert_silence": insert_silence,
    "remove_segment": remove_segment,
    "splice_foreign": splice_foreign,
    "gain_step": gain_step,
}


def run_step(buf: AudioBuffer, kind: str, params: Mapping[str, Any], seed: int = 0,
             other: Optional[AudioBuffer] = None):
    """Apply one catalog operation by name.

    ``splice_foreign`` takes its second buffer from ``other`` or, failing that,
    from ``params["other_path"]``.
    """
    try:
        fn = KINDS[kind]
    except KeyError:
        raise PerturbationError(f"unknown perturbation kind {kind!r}") from None
    params = dict(params)
    if kind == "splice_foreign":
        params.pop("other_digest", None)
        if other is None:
            path = params.get("other_path")
            if path is None:
                raise PerturbationError("splice_foreign needs another buffer or 'other_path'")
            other = read_wav(path)
        return fn(buf, other, **params)
    if kind in _STOCHASTIC:
        return fn(buf, seed=seed, **params)
    return fn(buf, **params)


def apply_plan(buf: AudioBuffer, plan: Sequence[PlanStep]):
    """Apply plan steps left to right, collecting one record per step."""
    records = []
    for i, step in enumerate(plan):
        try:
            buf, rec = run_step(buf, step.kind, step.params, step.seed)
        except (PerturbationError, AudioError, TypeError, OSError) as exc:
            raise PlanStepError(i, exc) from exc
        records.append(rec)
    return buf, records


def replay(buf: AudioBuffer, record: PerturbationRecord, other: Optional[AudioBuffer] = None):
    """Re-run a recorded perturbation on its source buffer."""
    out, rec = run_step(buf, record.kind, record.params, record.seed, other=other)
    if other is not None and record.kind == "splice_foreign":
        if other.digest() != record.params.get("other_digest"):
            raise PerturbationError("foreign buffer does not match the recorded digest")
    return out, rec
