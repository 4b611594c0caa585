import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from speechdiag.audio import (
    INFINITE_SNR,
    SILENT,
    AudioBuffer,
    AudioError,
    EmptyAudio,
    LengthMismatch,
    SampleOutOfRange,
    UnsupportedFormat,
    measure_snr,
    read_wav,
    resample,
    rms_db,
    write_wav,
)

from conftest import speech_like, tone


def test_buffer_invariants():
    b = AudioBuffer([0.0] * 800, 16000)
    assert b.duration_s == 0.05
    assert not b.samples.flags.writeable
    with pytest.raises(AudioError):
        AudioBuffer(np.zeros((2, 4)), 16000)
    with pytest.raises(AudioError):
        AudioBuffer([0.0], 0)


def test_read_silence(tmp_path):
    p = tmp_path / "s.wav"
    wavfile.write(p, 16000, np.zeros(16000, dtype=np.int16))
    b = read_wav(p)
    assert len(b) == 16000 and not np.any(b.samples)


def test_stereo_cancels(tmp_path):
    x = (np.sin(np.arange(1000) / 10) * 10000).astype(np.int16)
    p = tmp_path / "st.wav"
    wavfile.write(p, 16000, np.stack([x, -x], axis=1))
    assert not np.any(read_wav(p).samples)


def test_pcm_scaling(tmp_path):
    p = tmp_path / "max.wav"
    wavfile.write(p, 8000, np.array([32767, -32768], dtype=np.int16))
    b = read_wav(p)
    assert b.samples[0] == pytest.approx(32767 / 32768)
    assert b.samples[1] == -1.0


def test_float32_input(tmp_path):
    p = tmp_path / "f.wav"
    wavfile.write(p, 22050, np.array([0.25, -0.5], dtype=np.float32))
    assert list(read_wav(p).samples) == [0.25, -0.5]


def test_unsupported_inputs(tmp_path):
    p = tmp_path / "i32.wav"
    wavfile.write(p, 16000, np.zeros(10, dtype=np.int32))
    with pytest.raises(UnsupportedFormat):
        read_wav(p)
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFF\x00\x00")
    with pytest.raises(UnsupportedFormat):
        read_wav(bad)
    empty = tmp_path / "empty.wav"
    wavfile.write(empty, 16000, np.zeros(0, dtype=np.int16))
    with pytest.raises(EmptyAudio):
        read_wav(empty)


def test_sine_round_trip(tmp_path):
    b = tone(440, 0.5, amp=0.9)
    write_wav(b, tmp_path / "t.wav")
    back = read_wav(tmp_path / "t.wav")
    assert np.max(np.abs(back.samples - b.samples)) <= 2 ** -15


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=200))
def test_round_trip_property(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("rt") / "x.wav"
    b = AudioBuffer(values, 16000)
    write_wav(b, p)
    assert np.max(np.abs(read_wav(p).samples - b.samples)) <= 2 ** -15


def test_write_rejects_out_of_range(tmp_path):
    with pytest.raises(SampleOutOfRange):
        write_wav(AudioBuffer([0.0, 1.5], 16000), tmp_path / "x.wav")
    assert not (tmp_path / "x.wav").exists()


def test_write_empty(tmp_path):
    p = tmp_path / "e.wav"
    write_wav(AudioBuffer([], 16000), p)
    with wave.open(str(p)) as w:
        assert w.getnframes() == 0 and w.getsampwidth() == 2 and w.getnchannels() == 1


def test_rms_db():
    assert rms_db(AudioBuffer(np.resize([1.0, -1.0], 1000), 8000)) == 0.0
    t = np.arange(16000) / 16000
    assert rms_db(AudioBuffer(np.sin(2 * np.pi * 100 * t), 16000)) == pytest.approx(
        20 * math.log10(1 / math.sqrt(2)), abs=1e-6)
    assert rms_db(AudioBuffer(np.zeros(10), 8000)) == SILENT
    with pytest.raises(EmptyAudio):
        rms_db(AudioBuffer([], 8000))


def test_measure_snr():
    b = speech_like(0.2)
    assert measure_snr(b, b) == INFINITE_SNR
    # noise equal in power to the signal
    assert measure_snr(b, b.with_samples(2 * b.samples)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(LengthMismatch):
        measure_snr(b, speech_like(0.1))
    with pytest.raises(AudioError):
        measure_snr(AudioBuffer(np.zeros(5), 16000), AudioBuffer(np.ones(5) * 0.1, 16000))


def test_resample_examples():
    b = speech_like(1.0)
    assert resample(b, 16000) == b
    half = resample(b, 8000)
    assert len(half) == 8000 and half.sample_rate == 8000
    dc = AudioBuffer(np.full(1234, 0.3), 16000)
    for rate in (8000, 22050, 44100):
        assert np.allclose(resample(dc, rate).samples, 0.3)


@given(st.integers(1, 5000), st.sampled_from([8000, 11025, 16000, 22050, 44100, 48000]),
       st.sampled_from([8000, 11025, 16000, 22050, 44100, 48000]))
def test_resample_preserves_duration(n, old, new):
    b = AudioBuffer(np.zeros(n), old)
    out = resample(b, new)
    assert len(out) == round(n * new / old)
    assert abs(out.duration_s - b.duration_s) <= 1 / new
