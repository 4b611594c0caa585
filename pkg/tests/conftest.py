from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from speechdiag.audio import AudioBuffer, write_wav
from speechdiag.dataset import Label, Manifest, SampleRecord, write_manifest
from speechdiag.schema import builtin_schema

SR = 16000


@pytest.fixture(scope="session")
def schema():
    return builtin_schema()


def speech_like(seconds: float = 1.0, seed: int = 0, sr: int = SR) -> AudioBuffer:
    """Band-limited noise with a syllable-rate envelope; never silent."""
    rng = np.random.default_rng(seed)
    n = int(seconds * sr)
    noise = rng.standard_normal(n)
    kernel = np.hanning(9)
    noise = np.convolve(noise, kernel / kernel.sum(), mode="same")
    t = np.arange(n) / sr
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * 4.0 * t) ** 2
    x = noise * envelope
    return AudioBuffer(0.3 * x / np.max(np.abs(x)), sr)


def tone(freq: float, seconds: float = 1.0, amp: float = 0.5, sr: int = SR) -> AudioBuffer:
    t = np.arange(int(seconds * sr)) / sr
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), sr)


def make_manifest(tmp_path: Path, n: int, systems=("sysA", "sysB"), seconds: float = 0.5,
                  labels: bool = True, name: str = "manifest.jsonl") -> Path:
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n):
        buf = speech_like(seconds, seed=i)
        write_wav(buf, audio_dir / f"s{i:03d}.wav")
        lab = {}
        if labels:
            lab = {d: Label(4 if d <= 8 else 1, "", "expert") for d in range(1, 13)}
        records.append(SampleRecord(
            id=f"s{i:03d}",
            audio_path=f"audio/s{i:03d}.wav",
            source_text=f"sample sentence number {i}",
            source_system=systems[i % len(systems)],
            labels=lab,
            text_domain=("literary", "conversational", "web")[i % 3],
        ))
    path = tmp_path / name
    write_manifest(Manifest(records), path)
    return path
