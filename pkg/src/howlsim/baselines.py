"""Classical reference suppressors for the closed loop.

Three streaming processors, all zero-latency at the frame level:

  PassthroughSuppressor   transmits the mic signal unchanged
  NlmsSuppressor          normalized-LMS echo canceller against one reference
  NlmsNotchSuppressor     NLMS plus a howling detector driving a notch bank

plus OracleSuppressor, the test instrument that transmits ground-truth near
speech. Every processor keeps per-stream state: one instance per stream.

The NLMS inner loop is the package's hot kernel; it dispatches to the
compiled extension when available (see howlsim._kernels).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from ._kernels import nlms_run
from .errors import ConfigError
from .spectral import FFT_SIZE, HOP, FrameConfig
from .wavio import SAMPLE_RATE

NLMS_TAPS = 4096  # 256 ms at 16 kHz: covers the early energy of RT60 <= 0.6
NLMS_MU = 0.5
NLMS_DELTA = 1e-6

MAX_NOTCHES = 8
NOTCH_BANDWIDTH_HZ = 60.0
NOTCH_DEPTH_DB = 25.0

SUPPRESSOR_NAMES = ("passthrough", "nlms", "nlms+notch", "oracle")


@dataclass
class NlmsState:
    """Filter taps plus the reference delay line of one NLMS stream.

    mu = 0 is allowed and freezes the taps (useful as a null adaptation
    control); divergence-free adaptation needs mu in (0, 2).
    """

    w: np.ndarray
    hist: np.ndarray
    pos: int
    mu: float
    delta: float

    @classmethod
    def create(cls, taps=NLMS_TAPS, mu=NLMS_MU, delta=NLMS_DELTA):
        if taps < 1:
            raise ConfigError("need at least one filter tap")
        if not (0.0 <= mu < 2.0):
            raise ConfigError(f"mu must lie in [0, 2), got {mu}")
        if delta <= 0.0:
            raise ConfigError("delta must be positive")
        return cls(w=np.zeros(taps), hist=np.zeros(taps), pos=0, mu=mu, delta=delta)


def nlms_step(state, mic_frame, ref_frame):
    """One frame of NLMS echo cancellation: out = mic - filter*ref, taps
    updated per sample. Functional: returns (out_frame, new state)."""
    mic = np.ascontiguousarray(mic_frame, dtype=np.float64)
    ref = np.ascontiguousarray(ref_frame, dtype=np.float64)
    if mic.shape != ref.shape or mic.ndim != 1:
        raise ConfigError("mic and reference frames must be equal-length vectors")
    new = NlmsState(
        w=state.w.copy(), hist=state.hist.copy(), pos=state.pos,
        mu=state.mu, delta=state.delta,
    )
    out = np.empty(len(mic))
    new.pos = nlms_run(new.w, new.hist, new.pos, mic, ref, new.mu, new.delta, out)
    return out, new


class Suppressor:
    """Streaming frame callback for simulate_closed_loop.

    Maps one hop-sized mic frame (plus the reference dict with 'x', 'x21',
    'x1') to one transmit frame. latency_hops declares how many hops the
    output trails the input; all baselines here are zero-latency.
    """

    latency_hops = 0

    def reset(self):
        pass

    def __call__(self, mic, refs):
        raise NotImplementedError


class PassthroughSuppressor(Suppressor):
    def __call__(self, mic, refs):
        return np.asarray(mic, dtype=np.float64).copy()


GATE_RATIO = 4.0  # freeze when residual/mic power exceeds this multiple of its floor
GATE_FLOOR_RISE = 1.0005  # per-frame creep of the calibrated floor (forgets old optima)
GATE_REF_FLOOR = 1e-4  # of peak reference frame power: below it, never adapt
GATE_SMOOTH = 0.25  # one-pole frame-power smoothing (~4 frames)


class NlmsSuppressor(Suppressor):
    """Echo canceller using one loudspeaker reference (x1 by default: the
    realistic single-reference condition).

    Adaptation is energy-gated: the suppressor tracks the smoothed
    residual-to-mic power ratio and its running floor. While cancelling
    far-end-driven echo the ratio sits near the floor; near-end speech (or a
    silent reference) lifts it, which freezes the taps for those frames so
    double talk cannot retune the filter onto the near signal. The gate
    self-calibrates: it stays open from cold start until a floor is
    established, so a reference-only lead-in converges normally.
    """

    def __init__(self, taps=NLMS_TAPS, mu=NLMS_MU, delta=NLMS_DELTA, ref_key="x1", gate=True):
        self.taps = taps
        self.mu = mu
        self.delta = delta
        self.ref_key = ref_key
        self.gate = gate
        self.reset()

    def reset(self):
        self.state = NlmsState.create(self.taps, self.mu, self.delta)
        self._p_mic = 0.0
        self._p_res = 0.0
        self._p_ref_max = 0.0
        self._ratio_floor = 1.0

    def _gated_mu(self, p_ref):
        if not self.gate:
            return self.mu
        if self._p_ref_max > 0.0 and p_ref <= GATE_REF_FLOOR * self._p_ref_max:
            return 0.0  # reference too quiet: normalized updates would chase noise
        if self._p_mic <= 0.0:
            return self.mu  # nothing heard yet: cold start stays open
        ratio = self._p_res / self._p_mic
        return self.mu if ratio <= GATE_RATIO * self._ratio_floor else 0.0

    def __call__(self, mic, refs):
        mic = np.ascontiguousarray(mic, dtype=np.float64)
        ref = np.ascontiguousarray(refs[self.ref_key], dtype=np.float64)
        if mic.shape != ref.shape:
            raise ConfigError("reference frame length differs from mic frame")
        p_ref = float(np.mean(ref * ref)) if len(ref) else 0.0
        mu = self._gated_mu(p_ref)
        out = np.empty(len(mic))
        st = self.state
        st.pos = nlms_run(st.w, st.hist, st.pos, mic, ref, mu, st.delta, out)
        if self.gate and len(mic):
            a = GATE_SMOOTH
            self._p_mic = (1.0 - a) * self._p_mic + a * float(np.mean(mic * mic))
            self._p_res = (1.0 - a) * self._p_res + a * float(np.mean(out * out))
            self._p_ref_max = max(self._p_ref_max, p_ref)
            self._ratio_floor = min(self._ratio_floor * GATE_FLOOR_RISE, 1.0)
            if self._p_mic > 0.0:
                self._ratio_floor = min(self._ratio_floor, self._p_res / self._p_mic)
        return out


class HowlingDetector:
    """Flags spectral bins that stand 10 dB above the frame average for 8
    consecutive frames (defaults calibrated on the white-noise false-positive
    criterion: < 5% of frames flag anything)."""

    def __init__(self, ratio_db=10.0, persistence=8, n_bins=FFT_SIZE // 2 + 1):
        if persistence < 1:
            raise ConfigError("persistence must be at least 1")
        self.ratio = 10.0 ** (ratio_db / 20.0)
        self.persistence = persistence
        self.n_bins = n_bins
        self.reset()

    def reset(self):
        self.counts = np.zeros(self.n_bins, dtype=np.int64)

    def update(self, mag_frame):
        """Feed one magnitude frame; returns the currently persistent bins."""
        mag = np.asarray(mag_frame, dtype=np.float64)
        if mag.shape != (self.n_bins,):
            raise ConfigError(f"expected {self.n_bins} magnitude bins, got {mag.shape}")
        above = mag > self.ratio * np.mean(mag)
        self.counts[above] += 1
        self.counts[~above] = 0
        return np.nonzero(self.counts >= self.persistence)[0]

    def bin_frequency(self, bin_index, sample_rate=SAMPLE_RATE):
        return bin_index * sample_rate / FFT_SIZE


def _peaking_cut(center_hz, bandwidth_hz, depth_db, sample_rate=SAMPLE_RATE):
    """Biquad coefficients for a peaking-EQ cut: depth_db attenuation at the
    center, unity gain far from it."""
    amp = 10.0 ** (-depth_db / 40.0)
    w0 = 2.0 * math.pi * center_hz / sample_rate
    q = center_hz / bandwidth_hz
    alpha = math.sin(w0) / (2.0 * q)
    b = np.array([1.0 + alpha * amp, -2.0 * math.cos(w0), 1.0 - alpha * amp])
    a = np.array([1.0 + alpha / amp, -2.0 * math.cos(w0), 1.0 - alpha / amp])
    return b / a[0], a / a[0]


class NotchBank:
    """Cascade of up to MAX_NOTCHES streaming biquad cuts."""

    def __init__(self, max_notches=MAX_NOTCHES):
        self.max_notches = max_notches
        self.notches = []  # (center_hz, bandwidth_hz, depth_db)
        self._filters = []  # (b, a, zi)

    def add_notch(self, center_hz, bandwidth_hz=NOTCH_BANDWIDTH_HZ, depth_db=NOTCH_DEPTH_DB, replace_oldest=False):
        if not (0.0 < center_hz < SAMPLE_RATE / 2):
            raise ConfigError(f"notch center must lie in (0, {SAMPLE_RATE // 2}) Hz")
        if bandwidth_hz <= 0 or depth_db <= 0:
            raise ConfigError("bandwidth and depth must be positive")
        if len(self.notches) >= self.max_notches:
            if not replace_oldest:
                raise ConfigError(f"notch bank is full ({self.max_notches})")
            self.notches.pop(0)
            self._filters.pop(0)
        b, a = _peaking_cut(center_hz, bandwidth_hz, depth_db)
        self.notches.append((center_hz, bandwidth_hz, depth_db))
        self._filters.append((b, a, np.zeros(2)))

    def covers(self, freq_hz):
        return any(abs(c - freq_hz) <= bw for c, bw, _ in self.notches)

    def process(self, frame):
        out = np.asarray(frame, dtype=np.float64).copy()
        for i, (b, a, zi) in enumerate(self._filters):
            out, zi = lfilter(b, a, out, zi=zi)
            self._filters[i] = (b, a, zi)
        return out

    def reset(self):
        self._filters = [(b, a, np.zeros(2)) for b, a, _ in self._filters]


def notch_apply(bank, frame):
    """Apply the bank's cascade to one frame (advances its streaming state)."""
    return bank.process(frame)


class NlmsNotchSuppressor(Suppressor):
    """NLMS echo cancellation followed by detect-and-notch howling control.

    The detector watches 512-sample windowed spectra of the canceller output;
    persistent peaks get a notch at their bin frequency. The bank replaces
    its oldest notch when full.
    """

    def __init__(self, taps=NLMS_TAPS, mu=NLMS_MU, delta=NLMS_DELTA, ref_key="x1",
                 ratio_db=10.0, persistence=8,
                 bandwidth_hz=NOTCH_BANDWIDTH_HZ, depth_db=NOTCH_DEPTH_DB):
        self.nlms = NlmsSuppressor(taps, mu, delta, ref_key)
        self.detector = HowlingDetector(ratio_db, persistence)
        self.bandwidth_hz = bandwidth_hz
        self.depth_db = depth_db
        self._window = FrameConfig().window_samples()
        self.reset()

    def reset(self):
        self.nlms.reset()
        self.detector.reset()
        self.bank = NotchBank()
        self._buffer = np.zeros(FFT_SIZE)

    def __call__(self, mic, refs):
        e = self.nlms(mic, refs)
        self._buffer = np.concatenate([self._buffer[len(e):], e])
        mag = np.abs(np.fft.rfft(self._buffer * self._window))
        for bin_index in self.detector.update(mag):
            freq = self.detector.bin_frequency(int(bin_index))
            if 0.0 < freq < SAMPLE_RATE / 2 and not self.bank.covers(freq):
                self.bank.add_notch(freq, self.bandwidth_hz, self.depth_db, replace_oldest=True)
        return self.bank.process(e)


class OracleSuppressor(Suppressor):
    """Transmits ground-truth near speech; the Eq.-style consistency probe."""

    def __init__(self, s1):
        self.s1 = np.asarray(s1, dtype=np.float64)
        self.reset()

    def reset(self):
        self.pos = 0

    def __call__(self, mic, refs):
        out = np.zeros(len(mic))
        chunk = self.s1[self.pos : self.pos + len(mic)]
        out[: len(chunk)] = chunk
        self.pos += len(mic)
        return out


def make_suppressor(name, scene=None, **kwargs):
    """CLI-facing factory. 'oracle' needs the scene whose s1 it will transmit."""
    if name == "passthrough":
        return PassthroughSuppressor()
    if name == "nlms":
        return NlmsSuppressor(**kwargs)
    if name == "nlms+notch":
        return NlmsNotchSuppressor(**kwargs)
    if name == "oracle":
        if scene is None:
            raise ConfigError("oracle suppressor needs scene signals")
        return OracleSuppressor(scene.s1)
    raise ConfigError(f"unknown suppressor {name!r}; choose from {SUPPRESSOR_NAMES}")


def run_offline(suppressor, mic, refs):
    """Stream a recorded mic signal through a suppressor, frame by frame.

    refs maps reference names to full-length waveforms aligned with mic
    (trailing samples are zero-filled per frame). Same framing as the live
    closed loop, so scores are comparable; returns the suppressed signal at
    the mic's length.
    """
    mic = np.asarray(mic, dtype=np.float64)
    if mic.ndim != 1 or mic.size == 0:
        raise ConfigError("run_offline expects a non-empty mono signal")
    refs = {k: np.asarray(v, dtype=np.float64) for k, v in refs.items()}
    n = len(mic)
    n_blocks = math.ceil(n / HOP)
    out = np.zeros(n_blocks * HOP)
    suppressor.reset()

    def block(x, a, b):
        frame = np.zeros(HOP)
        stop = min(b, len(x))
        if stop > a:
            frame[: stop - a] = x[a:stop]
        return frame

    for m in range(n_blocks):
        a, b = m * HOP, (m + 1) * HOP
        frame = suppressor(block(mic, a, b), {k: block(v, a, b) for k, v in refs.items()})
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (HOP,):
            raise ConfigError(f"suppressor returned frame of shape {frame.shape}, expected ({HOP},)")
        out[a:b] = frame
    return out[:n]
