"""Hybrid-meeting scene assembly: teacher-forced mixtures and the live
closed acoustic loop.

Device 1 is the near-end device whose microphone we simulate. Its mic picks
up the near talker (s1), local noise (n1), its own loudspeaker echo (d11),
and the playback of device 2's loudspeaker (d21). Device 2 receives device
1's transmitted signal after a system delay plus the far-end signal, so with
a pass-through transmit path the arrangement closes into a feedback loop.

Two generators share one signal model:

  mix_teacher_forced  replaces the transmitted signal inside d21 with the
                      ground-truth near speech image s1, collapsing the
                      recursion into a one-shot mixture.
  simulate_closed_loop runs the true sample-level recursion with a pluggable
                       frame suppressor and saturates the mic at +-1.0.

With an oracle suppressor that transmits s1, both produce the same y1 to
within numeric tolerance: the teacher-forcing consistency property.

x21, the far device's playback of near speech, is rendered as a half-gain,
system-delayed copy of the talker's image at device 2's microphone (a
delayed, scaled, reverberant version of the near speech); the sidecar of an
exported scene records this.
"""

import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import fftconvolve

from .acoustic import Nonlinearity, apply_nonlinearity, convolve
from .errors import ConfigError, DegenerateInputError
from .spectral import HOP
from .wavio import SAMPLE_RATE, write_wav

X21_GAIN = 0.5


@dataclass(frozen=True)
class SceneConfig:
    """Knobs of one two-device scene.

    delta_t is the one-way system delay in seconds; gains and nl hold the
    per-device amplifier gain and loudspeaker nonlinearity (device 1 first).
    sfr_db fixes the power ratio of s1 to d11+d21; snr_db the ratio of
    (s1 + playbacks) to n1, both over the full utterance.
    """

    delta_t: float = 0.2
    gains: tuple = (1.0, 1.0)
    nl: tuple = (Nonlinearity("identity"), Nonlinearity("identity"))
    sfr_db: float = 0.0
    snr_db: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if not (0.1 <= self.delta_t <= 0.3):
            raise ConfigError(f"delta_t must lie in [0.1, 0.3] s, got {self.delta_t}")
        if not (-20.0 <= self.sfr_db <= 5.0):
            raise ConfigError(f"sfr_db must lie in [-20, 5] dB, got {self.sfr_db}")
        if not (-10.0 <= self.snr_db <= 30.0):
            raise ConfigError(f"snr_db must lie in [-10, 30] dB, got {self.snr_db}")
        if len(self.gains) != 2 or len(self.nl) != 2:
            raise ConfigError("scene is fixed at two devices: need 2 gains, 2 nonlinearities")
        if any(g < 0 for g in self.gains):
            raise ConfigError("gains must be non-negative")

    @property
    def delay_samples(self):
        return int(round(self.delta_t * SAMPLE_RATE))


@dataclass(frozen=True)
class SceneSignals:
    """All labelled waveforms of one scene, equal length, 16 kHz.

    alpha is the amplitude factor applied to both playback paths to hit
    sfr_db; beta the factor applied to the noise to hit snr_db. d21_x/d21_s
    (and the d11 pair) split each playback into its far-end-driven part and
    the complement driven by near speech.
    """

    s1: np.ndarray
    n1: np.ndarray
    x: np.ndarray
    x21: np.ndarray
    x1: np.ndarray
    d11: np.ndarray
    d21: np.ndarray
    d21_x: np.ndarray
    d21_s: np.ndarray
    d11_x: np.ndarray
    d11_s: np.ndarray
    y1: np.ndarray
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        n = len(self.s1)
        for name in ("n1", "x", "x21", "x1", "d11", "d21", "d21_x", "d21_s", "d11_x", "d11_s", "y1"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"scene signal {name} length differs from s1")

    def __len__(self):
        return len(self.s1)

    def components(self):
        """Playback components keyed for the loss playback selectors."""
        return {"d21": self.d21, "d21_s": self.d21_s, "d11": self.d11, "d11_s": self.d11_s}


def delay(x, n_samples):
    """x delayed by n_samples with zero fill, same length."""
    if n_samples < 0:
        raise ConfigError("delay must be non-negative")
    if n_samples == 0:
        return np.asarray(x, dtype=np.float64).copy()
    out = np.zeros(len(x))
    out[n_samples:] = x[: len(x) - n_samples]
    return out


def scale_to_sfr(target, feedback, sfr_db):
    """Amplitude factor for feedback so 10*log10(Pt/Pf) hits sfr_db."""
    et = float(np.dot(target, target))
    ef = float(np.dot(feedback, feedback))
    if et == 0.0 or ef == 0.0:
        raise DegenerateInputError("scale_to_sfr requires nonzero-energy signals")
    return math.sqrt(et / ef) * 10.0 ** (-sfr_db / 20.0)


def scale_to_snr(signal, noise, snr_db):
    """Amplitude factor for noise so 10*log10(Ps/Pn) hits snr_db."""
    es = float(np.dot(signal, signal))
    en = float(np.dot(noise, noise))
    if es == 0.0 or en == 0.0:
        raise DegenerateInputError("scale_to_snr requires nonzero-energy signals")
    return math.sqrt(es / en) * 10.0 ** (-snr_db / 20.0)


def _check_inputs(speech, far, noise):
    speech = np.asarray(speech, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if not np.any(speech):
        raise DegenerateInputError("near-end speech is all zero")
    if len(speech) < SAMPLE_RATE:
        raise DegenerateInputError("scene inputs must be at least 1 s long")
    if len(far) != len(speech) or len(noise) != len(speech):
        raise ConfigError("speech, far and noise must share one length")
    return speech, far, noise


def _require_paths(rirs):
    for key in ((0, 1), (0, 2), (1, 1), (2, 1)):
        rirs.path(*key)  # raises ConfigError when missing


def mix_teacher_forced(speech, far, noise, rirs, cfg):
    """One-shot scene mixture with the transmit signal teacher-forced to s1.

    y1 = s1 + n1 + d11 + NL2[(s1 delayed by delta_t + x) * G2] * h21, with
    both playback paths scaled to sfr_db and the noise to snr_db. The scaling
    is folded in after the nonlinearities (physically: quieter coupling
    paths), which keeps the decomposition exact in the nonlinear case too.
    """
    speech, far, noise = _check_inputs(speech, far, noise)
    _require_paths(rirs)
    g1, g2 = cfg.gains
    nl1, nl2 = cfg.nl
    d = cfg.delay_samples

    s1 = convolve(speech, rirs.path(0, 1))
    x21 = X21_GAIN * delay(convolve(speech, rirs.path(0, 2)), d)
    x1 = far + x21

    d11_raw = convolve(apply_nonlinearity(x1, nl1, g1), rirs.path(1, 1))
    d21_raw = convolve(apply_nonlinearity(delay(s1, d) + far, nl2, g2), rirs.path(2, 1))

    feedback = d11_raw + d21_raw
    if float(np.dot(feedback, feedback)) > 0.0:
        alpha = scale_to_sfr(s1, feedback, cfg.sfr_db)
    else:
        alpha = 1.0  # all coupling paths silent; nothing to scale
    d11 = alpha * d11_raw
    d21 = alpha * d21_raw

    # far-end-driven parts of each playback; the complements are the
    # near-speech-driven parts (exactly the linear split for identity NL)
    d11_x = alpha * convolve(apply_nonlinearity(far, nl1, g1), rirs.path(1, 1))
    d21_x = alpha * convolve(apply_nonlinearity(far, nl2, g2), rirs.path(2, 1))
    d11_s = d11 - d11_x
    d21_s = d21 - d21_x

    if float(np.dot(noise, noise)) > 0.0:
        beta = scale_to_snr(s1 + d11 + d21, noise, cfg.snr_db)
        n1 = beta * noise
    else:
        beta = 0.0
        n1 = np.zeros_like(speech)

    y1 = s1 + n1 + d11 + d21
    return SceneSignals(
        s1=s1, n1=n1, x=far, x21=x21, x1=x1,
        d11=d11, d21=d21, d21_x=d21_x, d21_s=d21_s, d11_x=d11_x, d11_s=d11_s,
        y1=y1, alpha=alpha, beta=beta,
    )


def measure_loop_gain(rirs, cfg, alpha=1.0):
    """Peak small-signal magnitude gain around the closed loop: transmit ->
    device-2 amplifier and loudspeaker -> h21 -> mic, for a pass-through
    suppressor. alpha is the feedback scale of the scene under test."""
    h21 = rirs.path(2, 1)
    n = max(4096, 1 << int(np.ceil(np.log2(max(len(h21), 2)))))
    spectrum = np.abs(np.fft.rfft(h21, n=n))
    return float(cfg.gains[1] * cfg.nl[1].small_signal_slope * alpha * spectrum.max())


def simulate_closed_loop(speech, far, noise, rirs, cfg, suppressor, loop_gain=None):
    """Run the live recursion with a frame-based suppressor in the transmit
    path. Returns (y1 history, suppressor output history).

    The mic saturates at +-1.0 (converter clipping) instead of diverging.
    The exogenous parts (s1, n1, d11) and the feedback scale alpha are taken
    from the teacher-forced mixture of the same inputs, so an oracle
    suppressor reproduces it exactly. loop_gain, when given, rescales the
    feedback path so measure_loop_gain would report that value.
    """
    scene = mix_teacher_forced(speech, far, noise, rirs, cfg)
    g2 = cfg.gains[1]
    nl2 = cfg.nl[1]
    d = cfg.delay_samples
    n = len(scene)

    h21_eff = scene.alpha * rirs.path(2, 1)
    if loop_gain is not None:
        current = measure_loop_gain(rirs, cfg, scene.alpha)
        if current == 0.0:
            raise ConfigError("cannot set loop_gain: the feedback path is silent")
        h21_eff = h21_eff * (loop_gain / current)

    exo = scene.s1 + scene.n1 + scene.d11
    if d < HOP:
        raise ConfigError("system delay shorter than one processing hop")

    n_blocks = math.ceil(n / HOP)
    total = n_blocks * HOP
    exo_pad = np.zeros(total)
    exo_pad[:n] = exo
    far_pad = np.zeros(total)
    far_pad[:n] = far

    y_hist = np.zeros(total)
    out_hist = np.zeros(total)
    # overlap-add tail of the feedback convolution
    pending = np.zeros(total + len(h21_eff))
    suppressor.reset()

    for m in range(n_blocks):
        a, b = m * HOP, (m + 1) * HOP
        # device-2 feed for this block depends only on past transmit samples
        # (the system delay exceeds one hop)
        lo, hi = a - d, b - d
        delayed = np.zeros(HOP)
        if hi > 0:
            take_lo = max(lo, 0)
            delayed[take_lo - lo :] = out_hist[take_lo:hi]
        u = apply_nonlinearity(delayed + far_pad[a:b], nl2, g2)
        seg = fftconvolve(u, h21_eff)
        pending[a : a + len(seg)] += seg

        y_blk = np.clip(exo_pad[a:b] + pending[a:b], -1.0, 1.0)
        y_hist[a:b] = y_blk
        refs = {"x": far_pad[a:b], "x21": _pad_slice(scene.x21, a, b), "x1": _pad_slice(scene.x1, a, b)}
        out_blk = np.asarray(suppressor(y_blk, refs), dtype=np.float64)
        if out_blk.shape != (HOP,):
            raise ConfigError(
                f"suppressor returned frame of shape {out_blk.shape}, expected ({HOP},)"
            )
        out_hist[a:b] = out_blk

    return y_hist[:n], out_hist[:n]


def _pad_slice(x, a, b):
    if b <= len(x):
        return x[a:b]
    out = np.zeros(b - a)
    if a < len(x):
        out[: len(x) - a] = x[a:]
    return out


def build_leveled_scene(speech, far, noise, rirs, cfg, headroom=0.9, max_rounds=4):
    """Teacher-forced scene with inputs rescaled until every converter-facing
    signal peaks at or below headroom. Returns (signals, input_scale).

    Rescaling the inputs and regenerating keeps the configured SFR/SNR exact
    (the ratios are re-established on each pass); a single multiplicative
    pass would not survive the nonlinearities.
    """
    if not (0.0 < headroom <= 1.0):
        raise ConfigError("headroom must lie in (0, 1]")
    scale = 1.0
    scene = mix_teacher_forced(speech, far, noise, rirs, cfg)
    for _ in range(max_rounds):
        peak = max(
            float(np.max(np.abs(scene.y1))),
            float(np.max(np.abs(scene.x1))),
            float(np.max(np.abs(scene.s1))),
        )
        if peak <= headroom:
            break
        scale *= headroom / peak
        scene = mix_teacher_forced(scale * speech, scale * far, scale * noise, rirs, cfg)
    return scene, scale


def window_energies(x, window_s=0.1, sample_rate=SAMPLE_RATE):
    """Mean energy of consecutive windows (trailing partial window dropped)."""
    w = int(round(window_s * sample_rate))
    if w < 1 or len(x) < w:
        raise DegenerateInputError("signal shorter than one window")
    m = len(x) // w
    seg = np.asarray(x[: m * w], dtype=np.float64).reshape(m, w)
    return np.mean(seg * seg, axis=1)


_EXPORT_FIELDS = ("s1", "n1", "x", "x21", "x1", "d11", "d21", "y1")
_DECOMP_FIELDS = ("d21_x", "d21_s", "d11_x", "d11_s")


def export_scene(signals, cfg, dirpath, include_decomposition=False, extras=None):
    """Write a scene as mono float32 WAVs plus a key=value sidecar."""
    os.makedirs(dirpath, exist_ok=True)
    names = _EXPORT_FIELDS + (_DECOMP_FIELDS if include_decomposition else ())
    for name in names:
        write_wav(os.path.join(dirpath, f"{name}.wav"), getattr(signals, name))
    lines = [
        f"sample_rate={SAMPLE_RATE}",
        f"delta_t={cfg.delta_t!r}",
        f"gain1={cfg.gains[0]!r}",
        f"gain2={cfg.gains[1]!r}",
        f"nl1={_nl_tag(cfg.nl[0])}",
        f"nl2={_nl_tag(cfg.nl[1])}",
        f"sfr_db={cfg.sfr_db!r}",
        f"snr_db={cfg.snr_db!r}",
        f"seed={cfg.seed}",
        f"alpha={signals.alpha!r}",
        f"beta={signals.beta!r}",
        f"x21=near speech image at device 2, gain {X21_GAIN}, delayed {cfg.delay_samples} samples",
    ]
    for key, value in (extras or {}).items():
        lines.append(f"{key}={value}")
    with open(os.path.join(dirpath, "scene.cfg"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _nl_tag(nl):
    if nl.kind == "hard_clip":
        return f"hard_clip:{nl.clip_threshold!r}"
    if nl.kind == "sigmoidal":
        return f"sigmoidal:{nl.sigmoid_gain!r}"
    return "identity"


def parse_nl_tag(tag):
    """Inverse of the sidecar nonlinearity tag."""
    if tag == "identity":
        return Nonlinearity("identity")
    kind, _, value = tag.partition(":")
    if kind == "hard_clip":
        return Nonlinearity("hard_clip", clip_threshold=float(value))
    if kind == "sigmoidal":
        return Nonlinearity("sigmoidal", sigmoid_gain=float(value))
    raise ConfigError(f"unknown nonlinearity tag {tag!r}")
