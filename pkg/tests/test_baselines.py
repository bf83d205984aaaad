"""Baseline suppressor tests: NLMS behaviour, detector calibration, notch
response, and the closed-loop ordering property."""

import numpy as np
import pytest

from helpers import howling_profile, synth_speech, tone

from howlsim.acoustic import generate_rir_set, random_room
from howlsim.baselines import (
    HowlingDetector,
    NlmsNotchSuppressor,
    NlmsState,
    NlmsSuppressor,
    NotchBank,
    OracleSuppressor,
    PassthroughSuppressor,
    make_suppressor,
    nlms_step,
    notch_apply,
)
from howlsim.errors import ConfigError
from howlsim.scene import SceneConfig, mix_teacher_forced, simulate_closed_loop
from howlsim.spectral import FFT_SIZE, FrameConfig

FS = 16000
HOP = 256


def frames(x, hop=HOP):
    for a in range(0, len(x) - hop + 1, hop):
        yield x[a : a + hop]


def test_nlms_zero_reference_is_passthrough():
    state = NlmsState.create(taps=64)
    rng = np.random.default_rng(0)
    mic = rng.standard_normal(HOP)
    out, new = nlms_step(state, mic, np.zeros(HOP))
    assert np.array_equal(out, mic)
    assert np.array_equal(new.w, state.w)


def test_nlms_zero_mu_freezes_filter():
    state = NlmsState.create(taps=64, mu=0.0)
    rng = np.random.default_rng(1)
    for _ in range(5):
        mic, ref = rng.standard_normal(HOP), rng.standard_normal(HOP)
        out, state = nlms_step(state, mic, ref)
        assert np.array_equal(out, mic)
        assert not np.any(state.w)


def test_nlms_step_is_functional():
    state = NlmsState.create(taps=128)
    rng = np.random.default_rng(2)
    mic, ref = rng.standard_normal(HOP), rng.standard_normal(HOP)
    w_before = state.w.copy()
    _, new = nlms_step(state, mic, ref)
    assert np.array_equal(state.w, w_before)  # input state untouched
    assert not np.array_equal(new.w, w_before)
    with pytest.raises(ConfigError):
        nlms_step(state, mic, ref[:-1])


def test_nlms_state_validation():
    with pytest.raises(ConfigError):
        NlmsState.create(mu=2.0)
    with pytest.raises(ConfigError):
        NlmsState.create(mu=-0.1)
    with pytest.raises(ConfigError):
        NlmsState.create(delta=0.0)
    with pytest.raises(ConfigError):
        NlmsState.create(taps=0)


def test_nlms_converges_on_static_linear_path():
    rng = np.random.default_rng(3)
    n = 10 * FS
    ref = rng.standard_normal(n)
    h = rng.standard_normal(300) * np.exp(-np.arange(300) / 60.0)
    mic = np.convolve(ref, h)[:n]
    supp = NlmsSuppressor()
    out = np.concatenate([supp(m, {"x1": r}) for m, r in zip(frames(mic), frames(ref))])
    tail = slice(len(out) - FS, len(out))
    attenuation = 10.0 * np.log10(
        np.dot(mic[tail], mic[tail]) / np.dot(out[tail], out[tail])
    )
    assert attenuation >= 20.0


def test_nlms_tap_norm_bounded_over_60s():
    rng = np.random.default_rng(4)
    n = 60 * FS
    ref = rng.standard_normal(n)
    h = rng.standard_normal(200) * np.exp(-np.arange(200) / 40.0)
    mic = np.convolve(ref, h)[:n] + 0.1 * rng.standard_normal(n)
    supp = NlmsSuppressor()
    norms = []
    for m, r in zip(frames(mic), frames(ref)):
        supp(m, {"x1": r})
        norms.append(np.linalg.norm(supp.state.w))
    assert np.all(np.isfinite(norms))
    assert max(norms) <= 10.0 * np.linalg.norm(h)


def test_detector_white_noise_rarely_fires():
    rng = np.random.default_rng(5)
    det = HowlingDetector()
    w = FrameConfig().window_samples()
    fired = 0
    for _ in range(1000):
        mag = np.abs(np.fft.rfft(rng.standard_normal(FFT_SIZE) * w))
        if len(det.update(mag)) > 0:
            fired += 1
    assert fired / 1000 < 0.05


def test_detector_flags_growing_sine_within_10_frames():
    rng = np.random.default_rng(6)
    det = HowlingDetector()
    w = FrameConfig().window_samples()
    t = np.arange(FFT_SIZE) / FS
    flagged_at = None
    for k in range(40):
        x = 0.01 * rng.standard_normal(FFT_SIZE)
        if k >= 20:
            x = x + 0.5 * (1.1 ** (k - 20)) * np.sin(2 * np.pi * 2000.0 * t)
        bins = det.update(np.abs(np.fft.rfft(x * w)))
        if 64 in bins:  # 2000 Hz -> bin 64
            flagged_at = k
            break
    assert flagged_at is not None and flagged_at <= 30


def test_detector_silence_is_empty():
    det = HowlingDetector()
    for _ in range(20):
        assert len(det.update(np.zeros(257))) == 0


def test_notch_empty_bank_is_identity():
    bank = NotchBank()
    rng = np.random.default_rng(7)
    x = rng.standard_normal(1024)
    assert np.array_equal(notch_apply(bank, x), x)


def test_notch_attenuates_its_center():
    bank = NotchBank()
    bank.add_notch(2000.0)
    x = tone(2000.0, 2 * FS)
    out = np.concatenate([notch_apply(bank, f) for f in frames(x)])
    tail = slice(FS, None)  # past the transient
    attenuation = 10.0 * np.log10(np.dot(x[tail], x[tail]) / np.dot(out[tail], out[tail]))
    assert attenuation >= 25.0 - 3.0


def test_notch_unity_away_from_center():
    bank = NotchBank()
    bank.add_notch(2000.0, bandwidth_hz=60.0)
    dc = np.ones(FS)
    out_dc = notch_apply(bank, dc)
    assert abs(np.mean(out_dc[-1000:]) - 1.0) < 0.1

    bank2 = NotchBank()
    bank2.add_notch(2000.0, bandwidth_hz=60.0)
    x = tone(5000.0, FS)
    out = notch_apply(bank2, x)
    tail = slice(FS // 2, None)
    loss = 10.0 * np.log10(np.dot(x[tail], x[tail]) / np.dot(out[tail], out[tail]))
    assert abs(loss) < 3.0


def test_notch_bank_limits_and_validation():
    bank = NotchBank()
    for k in range(8):
        bank.add_notch(500.0 + 300.0 * k)
    with pytest.raises(ConfigError):
        bank.add_notch(7000.0)
    bank.add_notch(7000.0, replace_oldest=True)
    assert len(bank.notches) == 8
    assert bank.notches[-1][0] == 7000.0
    with pytest.raises(ConfigError):
        NotchBank().add_notch(0.0)
    with pytest.raises(ConfigError):
        NotchBank().add_notch(8000.0)
    assert bank.covers(7010.0)
    assert not bank.covers(4321.0)


def test_oracle_suppressor_streams_ground_truth():
    rng = np.random.default_rng(8)
    s1 = rng.standard_normal(1000)
    supp = OracleSuppressor(s1)
    out = np.concatenate([supp(np.zeros(HOP), {}) for _ in range(4)])
    want = np.zeros(4 * HOP)
    want[:1000] = s1
    assert np.array_equal(out, want)
    supp.reset()
    assert np.array_equal(supp(np.zeros(HOP), {}), s1[:HOP])


def test_make_suppressor():
    assert isinstance(make_suppressor("passthrough"), PassthroughSuppressor)
    assert isinstance(make_suppressor("nlms"), NlmsSuppressor)
    assert isinstance(make_suppressor("nlms+notch"), NlmsNotchSuppressor)
    with pytest.raises(ConfigError):
        make_suppressor("oracle")
    with pytest.raises(ConfigError):
        make_suppressor("wiener")


def test_closed_loop_ordering_nlms_notch_beats_passthrough():
    # marginally unstable loop: pass-through howls to the rail, the
    # detect-and-notch chain keeps the output bounded
    rng = np.random.default_rng(np.random.SeedSequence([301, 0]))
    rirs = generate_rir_set(random_room(rng, rt60=0.3), seed=0)
    n = 12 * FS
    r2 = np.random.default_rng(np.random.SeedSequence([301, 1]))
    speech = 0.3 * synth_speech(r2, n)
    far = 0.15 * synth_speech(r2, n)
    noise = np.zeros(n)
    cfg = SceneConfig(delta_t=0.1, sfr_db=0.0)

    y_pass, _ = simulate_closed_loop(
        speech, far, noise, rirs, cfg, PassthroughSuppressor(), loop_gain=1.2
    )
    rail_hit, grew = howling_profile(y_pass)
    assert rail_hit and grew

    y_notch, _ = simulate_closed_loop(
        speech, far, noise, rirs, cfg, NlmsNotchSuppressor(), loop_gain=1.2
    )
    last_rms = np.sqrt(np.mean(y_notch[-FS:] ** 2))
    assert np.max(np.abs(y_notch[-2 * FS :])) < 0.99
    assert last_rms < 1.0
