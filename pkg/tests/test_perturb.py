import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechdiag.audio import AudioBuffer, measure_snr, rms_db, write_wav
from speechdiag.perturb import (
    KINDS,
    PerturbationError,
    PerturbationRecord,
    PlanStep,
    PlanStepError,
    add_hum,
    add_white_noise,
    apply_plan,
    gain_step,
    hard_clip,
    inject_pops,
    insert_silence,
    piecewise_rate_warp,
    pitch_shift,
    remove_segment,
    replay,
    splice_foreign,
    time_stretch,
)
from speechdiag.schema import builtin_schema

from conftest import speech_like, tone

SR = 16000


def dominant_hz(x: np.ndarray, sr: int) -> float:
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return float(np.argmax(spec) * sr / len(x))


def corr(a, b) -> float:
    return float(np.corrcoef(a, b)[0, 1])


# ---------------------------------------------------------------- audio quality


@pytest.mark.parametrize("target", [0, 10, 20, 40])
def test_noise_hits_target_snr(target):
    b = speech_like(1.0, seed=3)
    out, rec = add_white_noise(b, target, seed=11)
    assert abs(measure_snr(b, out) - target) <= 0.5
    assert rec.target_dimension == 2
    assert np.max(np.abs(out.samples)) <= 1.0


@pytest.mark.parametrize("snr,band", [(25, (4, 4)), (20, (4, 4)), (15, (3, 3)), (10, (3, 3)), (5, (2, 2))])
def test_noise_bands(snr, band):
    assert add_white_noise(speech_like(0.1), snr, seed=0)[1].target_score_band == band


def test_noise_identity_and_determinism():
    b = speech_like(0.5)
    assert add_white_noise(b, math.inf, seed=1)[0] == b
    assert add_white_noise(b, 20, seed=5)[0] == add_white_noise(b, 20, seed=5)[0]
    assert add_white_noise(b, 20, seed=5)[0] != add_white_noise(b, 20, seed=6)[0]


def test_noise_errors():
    with pytest.raises(PerturbationError):
        add_white_noise(AudioBuffer(np.zeros(100), SR), 20, seed=0)
    with pytest.raises(PerturbationError):
        add_white_noise(speech_like(0.1), float("nan"), seed=0)


def test_hum_level_and_frequency():
    silence = AudioBuffer(np.zeros(SR), SR)
    out, rec = add_hum(silence, 50, -30)
    assert rms_db(out) == pytest.approx(-30, abs=0.1)
    assert dominant_hz(out.samples - silence.samples, SR) == pytest.approx(50, abs=1)
    assert rec.target_score_band == (4, 4)
    assert add_hum(silence, 60, -20)[1].target_score_band == (3, 3)
    b = speech_like(0.2)
    assert add_hum(b, 50, -math.inf)[0] == b
    with pytest.raises(PerturbationError):
        add_hum(b, 8000, -30)


def test_hard_clip():
    s = tone(100, 1.0, amp=1.0)
    assert hard_clip(s, 1.0)[0] == s
    out, rec = hard_clip(s, 0.5)
    assert out.peak() == pytest.approx(0.5)
    assert rec.target_score_band == (2, 2)
    # a sine spends 1 - asin(t)/(pi/2) of its period above |t|
    frac = np.mean(np.abs(s.samples) >= 0.5 - 1e-12)
    assert frac == pytest.approx(1 - math.asin(0.5) / (math.pi / 2), abs=0.01)
    assert hard_clip(s, 0.7)[1].target_score_band == (3, 3)
    with pytest.raises(PerturbationError):
        hard_clip(s, 0)


def test_pops():
    b = AudioBuffer(np.zeros(10 * SR), SR)
    assert inject_pops(b, 0, 0.5, seed=0)[0] == b
    out, rec = inject_pops(b, 5, 0.8, seed=42)
    count = int(np.count_nonzero(out.samples))
    assert 30 <= count <= 70
    assert set(np.abs(out.samples[out.samples != 0])) == {0.8}
    assert rec.target_score_band == (2, 2)
    assert inject_pops(b, 5, 0.8, seed=42)[0] == out
    assert inject_pops(b, 1, 0.8, seed=0)[1].target_score_band == (3, 3)


# ---------------------------------------------------------------- rhythm / prosody


def test_time_stretch():
    b = speech_like(1.0)
    assert time_stretch(b, 1.0)[0] == b
    out, rec = time_stretch(b, 2.0)
    assert out.duration_s == pytest.approx(2.0, rel=0.01)
    assert rec.target_score_band == (2, 2)
    back = time_stretch(time_stretch(b, 0.5)[0], 2.0)[0]
    assert back.duration_s == pytest.approx(b.duration_s, rel=0.02)
    assert time_stretch(b, 1.2)[1].target_score_band == (3, 3)
    assert time_stretch(b, 0.85)[1].target_score_band == (3, 3)
    with pytest.raises(PerturbationError):
        time_stretch(b, 5)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.25, 4))
def test_time_stretch_duration_property(factor):
    b = speech_like(0.5)
    out, _ = time_stretch(b, factor)
    assert out.duration_s == pytest.approx(factor * b.duration_s, rel=0.01)


def test_piecewise_warp():
    b = speech_like(2.0)
    assert piecewise_rate_warp(b, [1.0], [1, 1])[0] == b
    out, rec = piecewise_rate_warp(b, [1.0], [1, 2])
    assert out.duration_s == pytest.approx(3.0, rel=0.01)
    assert rec.target_score_band == (2, 3)
    out, _ = piecewise_rate_warp(b, [0.5, 1.2], [0.8, 1.5, 1.1])
    assert out.duration_s == pytest.approx(0.5 * 0.8 + 0.7 * 1.5 + 0.8 * 1.1, rel=0.01)
    for bad in ([1.5, 1.0], [0.0], [2.0]):
        with pytest.raises(PerturbationError):
            piecewise_rate_warp(b, bad, [1] * (len(bad) + 1))
    with pytest.raises(PerturbationError):
        piecewise_rate_warp(b, [1.0], [1.0])


def test_pitch_shift_octave():
    b = tone(220, 1.0)
    out, rec = pitch_shift(b, 12)
    assert dominant_hz(out.samples, SR) == pytest.approx(440, rel=0.03)
    assert 0.98 <= out.duration_s / b.duration_s <= 1.02
    assert rec.target_score_band == (2, 2)
    assert pitch_shift(b, 2)[1].target_score_band == (3, 3)


def test_pitch_shift_zero_is_identity():
    b = speech_like(0.5)
    out, _ = pitch_shift(b, 0)
    assert corr(out.samples, b.samples) >= 0.99


@settings(max_examples=10, deadline=None)
@given(st.floats(-12, 12))
def test_pitch_shift_duration_property(st_):
    b = tone(300, 0.5)
    out, _ = pitch_shift(b, st_)
    assert 0.98 <= out.duration_s / b.duration_s <= 1.02


def test_pitch_shift_range():
    with pytest.raises(PerturbationError):
        pitch_shift(tone(220, 0.1), 13)


def test_insert_silence():
    b = speech_like(1.0)
    out, rec = insert_silence(b, 0.25, 0.5)
    assert len(out) == len(b) + 8000
    assert rec.target_score_band == (3, 3)
    k = 4000
    recovered = np.concatenate([out.samples[:k], out.samples[k + 8000:]])
    assert np.array_equal(recovered, b.samples)
    out0, _ = insert_silence(b, 0, 0.1)
    assert not np.any(out0.samples[:1600])
    assert insert_silence(b, 0, 0.8)[1].target_score_band == (2, 2)
    with pytest.raises(PerturbationError):
        insert_silence(b, 2.0, 0.1)


def test_remove_segment():
    b = speech_like(1.0)
    assert remove_segment(b, 0.3, 0.0)[0] == b
    out, rec = remove_segment(b, 0.3, 0.2)
    assert b.duration_s - out.duration_s == pytest.approx(0.2, abs=0.005)
    assert rec.target_dimension == 1
    with pytest.raises(PerturbationError):
        remove_segment(b, 0.9, 0.2)


def test_remove_segment_crossfade_softens_step():
    x = np.concatenate([np.full(SR // 2, -0.5), np.full(SR // 2, 0.5)])
    b = AudioBuffer(x, SR)
    # cut out a span straddling the step; without a crossfade the joint jumps by 1.0
    out, _ = remove_segment(b, 0.4, 0.2)
    assert np.max(np.abs(np.diff(out.samples))) <= 1.0 / (0.005 * SR) + 1e-9


def test_splice_foreign():
    a = speech_like(1.0, seed=1)
    other = speech_like(0.5, seed=2)
    out, rec = splice_foreign(a, other, 0.4)
    assert abs(len(out) - (int(0.4 * SR) + len(other))) <= 0.005 * SR
    assert rec.params["other_digest"] == other.digest()
    assert rec.target_score_band == (2, 3)
    trunc, _ = splice_foreign(a, AudioBuffer([], SR), 0.4)
    assert np.array_equal(trunc.samples, a.samples[: int(0.4 * SR)])
    self_splice, _ = splice_foreign(a, a, 0.5)
    ref = np.concatenate([a.samples[: SR // 2], a.samples])
    fade = int(0.005 * SR)
    ref = np.concatenate([ref[: SR // 2 - fade], ref[SR // 2:]])
    assert corr(self_splice.samples, ref) >= 0.99
    with pytest.raises(PerturbationError):
        splice_foreign(a, AudioBuffer([0.0], 8000), 0.1)


def test_gain_step():
    b = speech_like(1.0)
    assert gain_step(b, 0.5, 0)[0] == b
    out, rec = gain_step(b, 0.5, 20 * math.log10(2))
    k = SR // 2
    assert np.allclose(out.samples[k:], 2 * b.samples[k:], rtol=1e-12, atol=0)
    assert np.array_equal(out.samples[:k], b.samples[:k])
    assert rec.target_score_band == (2, 2)  # 6.02 dB is just past the 6 dB edge
    assert gain_step(b, 0.5, 6.0)[1].target_score_band == (3, 3)
    out, rec = gain_step(b, 0.5, -9)
    tail, tail2 = AudioBuffer(b.samples[k:], SR), AudioBuffer(out.samples[k:], SR)
    assert rms_db(tail2) - rms_db(tail) == pytest.approx(-9, abs=0.1)
    assert rec.target_score_band == (2, 2)
    with pytest.raises(PerturbationError):
        gain_step(b, 0.5, 12)


# ---------------------------------------------------------------- records / plans


def test_record_band_validation():
    with pytest.raises(PerturbationError):
        PerturbationRecord("x", {}, 9, (1, 3))
    rec = PerturbationRecord("x", {"a": 1}, 2, (3, 4), seed=7)
    assert PerturbationRecord.from_dict(rec.to_dict()) == rec


def test_every_kind_produces_valid_bands():
    schema = builtin_schema()
    b = speech_like(1.0)
    samples = {
        "add_white_noise": {"snr_db": 5}, "add_hum": {"freq_hz": 60, "level_dbfs": -25},
        "hard_clip": {"threshold_frac": 0.4}, "inject_pops": {"rate_per_s": 3, "amplitude": 0.5},
        "time_stretch": {"factor": 1.3}, "piecewise_rate_warp": {"boundaries_s": [0.5], "factors": [1, 1.4]},
        "pitch_shift": {"semitones": 3}, "insert_silence": {"at_s": 0.5, "dur_s": 0.7},
        "remove_segment": {"at_s": 0.2, "dur_s": 0.3}, "gain_step": {"at_s": 0.5, "delta_db": -8},
    }
    for kind, params in samples.items():
        _, rec = KINDS[kind](b, **params) if kind not in ("add_white_noise", "inject_pops") \
            else KINDS[kind](b, seed=1, **params)
        sc = schema.scale(rec.target_dimension)
        assert sc.min <= rec.target_score_band[0] <= rec.target_score_band[1] <= sc.max


def test_apply_plan():
    b = speech_like(1.0)
    assert apply_plan(b, []) == (b, [])
    plan = [PlanStep("add_white_noise", {"snr_db": 20}, seed=3), PlanStep("hard_clip", {"threshold_frac": 0.5})]
    out, recs = apply_plan(b, plan)
    manual = hard_clip(add_white_noise(b, 20, seed=3)[0], 0.5)[0]
    assert out == manual
    assert [r.kind for r in recs] == ["add_white_noise", "hard_clip"]
    assert apply_plan(b, plan)[0] == out


def test_apply_plan_reports_failing_step():
    b = speech_like(0.5)
    plan = [PlanStep("time_stretch", {"factor": 1.1}), PlanStep("insert_silence", {"at_s": 9, "dur_s": 1})]
    with pytest.raises(PlanStepError) as exc:
        apply_plan(b, plan)
    assert exc.value.index == 1
    with pytest.raises(PlanStepError):
        apply_plan(b, [PlanStep("no_such_kind")])


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["add_white_noise", "inject_pops", "time_stretch", "pitch_shift", "gain_step"]),
       st.integers(0, 2 ** 63 - 1))
def test_replay_is_bit_exact(kind, seed):
    b = speech_like(0.25, seed=seed % 7)
    params = {"add_white_noise": {"snr_db": 15.0}, "inject_pops": {"rate_per_s": 8.0, "amplitude": 0.6},
              "time_stretch": {"factor": 1.15}, "pitch_shift": {"semitones": -3.0},
              "gain_step": {"at_s": 0.1, "delta_db": 3.0}}[kind]
    from speechdiag.perturb import run_step
    out, rec = run_step(b, kind, params, seed)
    again, _ = replay(b, PerturbationRecord.from_dict(rec.to_dict()))
    assert again == out


def test_replay_splice_from_path(tmp_path):
    a, other = speech_like(0.5, seed=1), speech_like(0.3, seed=2)
    write_wav(other, tmp_path / "o.wav")
    from speechdiag.audio import read_wav
    other_q = read_wav(tmp_path / "o.wav")
    out, rec = splice_foreign(a, other_q, 0.2, other_path=str(tmp_path / "o.wav"))
    assert replay(a, rec)[0] == out
    with pytest.raises(PerturbationError):
        replay(a, rec, other=speech_like(0.3, seed=9))
