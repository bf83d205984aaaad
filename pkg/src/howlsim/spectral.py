"""Time-frequency engine: STFT/iSTFT, deep filtering, and the input feature set.

Geometry is fixed at 512-point frames (32 ms), 256-sample hop (16 ms),
square-root Hann analysis and synthesis windows (constant overlap-add at 50%),
one-sided transforms with 257 bins.

Feature layout (FEATURE_LAYOUT below) is frozen: consumers in other languages
read the same column order byte-for-byte.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal.windows import hann

from .errors import ConfigError, DegenerateInputError

EPS = 1e-12

FFT_SIZE = 512
FRAME_LEN = 512
HOP = 256
BINS = FFT_SIZE // 2 + 1

#: Column order of the feature matrix for C aligned channels (mic first,
#: then each loudspeaker reference). Width = 257*C + 2*C + 514*(C-1).
#:
#:   [0]               normalized log-power spectrum, channel 0   (257 cols)
#:   ...               ... one block per channel ...              (257 each)
#:   [257*C]           adjacent-frame correlation, channel 0: |c|, cos(angle)
#:   ...               ... two columns per channel ...
#:   [257*C + 2*C]     per reference r: cell-wise phase cosine of
#:                     Y*conj(R_r)                                (257 cols)
#:                     then per-bin coherence magnitude of the pair,
#:                     broadcast over frames                      (257 cols)
FEATURE_LAYOUT = "lps*C | framecorr(mag,cos)*C | per-ref: phasecos(257), coherence(257)"


def feature_dim(channels):
    """Feature-matrix width for this many aligned channels."""
    if channels < 1:
        raise ConfigError("need at least one channel")
    return BINS * channels + 2 * channels + 2 * BINS * (channels - 1)


@dataclass(frozen=True)
class FrameConfig:
    """STFT geometry. Only the 512/256 square-root Hann setup satisfies the
    reconstruction contract, so the defaults are also the only accepted values."""

    fft_size: int = FFT_SIZE
    frame_len: int = FRAME_LEN
    hop: int = HOP
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.window != "sqrt_hann":
            raise ConfigError(f"unsupported window {self.window!r}")
        if self.fft_size != self.frame_len:
            raise ConfigError("fft_size must equal frame_len")
        if self.hop * 2 != self.frame_len:
            raise ConfigError("hop must be frame_len/2 for overlap-add")

    @property
    def bins(self):
        return self.fft_size // 2 + 1

    def window_samples(self):
        # periodic Hann, then sqrt: analysis*synthesis overlap-adds to one
        return np.sqrt(hann(self.frame_len, sym=False))


@dataclass(frozen=True)
class Spectrogram:
    """One-sided complex STFT, data[frames, bins], with enough bookkeeping
    to invert back to origin_len samples."""

    data: np.ndarray
    cfg: FrameConfig = field(default_factory=FrameConfig)
    origin_len: int = 0

    def __post_init__(self):
        d = self.data
        if d.ndim != 2 or d.shape[1] != self.cfg.bins:
            raise ConfigError(f"spectrogram must be [frames, {self.cfg.bins}], got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ConfigError("spectrogram contains non-finite values")

    @property
    def frames(self):
        return self.data.shape[0]


def n_frames(n_samples, cfg=None):
    cfg = cfg or FrameConfig()
    if n_samples < cfg.frame_len:
        raise DegenerateInputError(
            f"need at least {cfg.frame_len} samples, got {n_samples}"
        )
    return 1 + math.ceil((n_samples - cfg.frame_len) / cfg.hop)


def stft(x, cfg=None):
    """Windowed one-sided STFT. The tail is zero-padded to a whole frame."""
    cfg = cfg or FrameConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError("stft expects a mono waveform")
    frames = n_frames(len(x), cfg)
    w = cfg.window_samples()
    padded = np.zeros((frames - 1) * cfg.hop + cfg.frame_len)
    padded[: len(x)] = x
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(frames)[:, None]
    segs = padded[idx] * w[None, :]
    return Spectrogram(data=np.fft.rfft(segs, n=cfg.fft_size, axis=1), cfg=cfg, origin_len=len(x))


def istft(spec):
    """Overlap-add inverse, normalized by the accumulated squared window and
    trimmed to origin_len. Interior samples reconstruct exactly; the first and
    last half frame are attenuated by the window ramp."""
    cfg = spec.cfg
    frames = spec.frames
    if frames < 1:
        raise DegenerateInputError("empty spectrogram")
    w = cfg.window_samples()
    total = (frames - 1) * cfg.hop + cfg.frame_len
    out = np.zeros(total)
    wsum = np.zeros(total)
    segs = np.fft.irfft(spec.data, n=cfg.fft_size, axis=1) * w[None, :]
    for m in range(frames):
        start = m * cfg.hop
        out[start : start + cfg.frame_len] += segs[m]
        wsum[start : start + cfg.frame_len] += w * w
    good = wsum > 1e-8
    out[good] /= wsum[good]
    end = spec.origin_len if spec.origin_len else total
    if end > total:
        raise ConfigError("origin_len exceeds the spectrogram span")
    return out[:end]


@dataclass(frozen=True)
class DeepFilter:
    """Complex tap field over a spectrogram's cells.

    taps[frames, bins, K] pairs with K signed (time, frequency) offsets;
    tap k at cell (t, f) multiplies S(t + dt_k, f + df_k), reading cells
    outside the spectrogram as zero. The default neighborhood is the current
    and two previous frames at the same bin.
    """

    taps: np.ndarray
    offsets: tuple = ((0, 0), (-1, 0), (-2, 0))

    def __post_init__(self):
        t = self.taps
        if t.ndim != 3 or t.shape[2] != len(self.offsets):
            raise ConfigError(
                f"taps must be [frames, bins, {len(self.offsets)}], got {t.shape}"
            )
        if not np.all(np.isfinite(t)):
            raise ConfigError("deep filter contains non-finite taps")


def _shift2d(a, dt, df):
    """a shifted so out[t, f] = a[t + dt, f + df], zero where out of range."""
    out = np.zeros_like(a)
    t0, t1 = max(0, -dt), min(a.shape[0], a.shape[0] - dt)
    f0, f1 = max(0, -df), min(a.shape[1], a.shape[1] - df)
    if t0 < t1 and f0 < f1:
        out[t0:t1, f0:f1] = a[t0 + dt : t1 + dt, f0 + df : f1 + df]
    return out


def deep_filter_apply(spec, filt):
    """Complex linear combination over each cell's tap neighborhood."""
    if filt.taps.shape[:2] != spec.data.shape:
        raise ConfigError(
            f"filter geometry {filt.taps.shape[:2]} does not match spectrogram {spec.data.shape}"
        )
    out = np.zeros_like(spec.data)
    for k, (dt, df) in enumerate(filt.offsets):
        out += filt.taps[:, :, k] * _shift2d(spec.data, dt, df)
    return Spectrogram(data=out, cfg=spec.cfg, origin_len=spec.origin_len)


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def _norm_lps(x):
    """Log-power spectrum, scale-invariant: the channel is divided by its RMS
    before the log, then mean/variance normalized. A zero channel keeps the
    raw constant log(EPS)."""
    power = np.abs(x) ** 2
    mean_power = float(np.mean(power))
    if mean_power > 0.0:
        power = power / mean_power
    lps = np.log(power + EPS)
    sd = float(np.std(lps))
    if sd > 1e-12:
        lps = (lps - float(np.mean(lps))) / sd
    return lps


def _frame_correlation(x):
    """Normalized complex correlation of each frame with its predecessor.
    Returns (magnitude, phase cosine), both zero at frame 0."""
    frames = x.shape[0]
    mag = np.zeros(frames)
    cos = np.zeros(frames)
    if frames < 2:
        return mag, cos
    num = np.sum(x[1:] * np.conj(x[:-1]), axis=1)
    den = np.sqrt(
        np.sum(np.abs(x[1:]) ** 2, axis=1) * np.sum(np.abs(x[:-1]) ** 2, axis=1)
    )
    ok = den > 0
    c = np.zeros_like(num)
    c[ok] = num[ok] / den[ok]
    mag[1:] = np.abs(c)
    nz = mag[1:] > 0
    cos[1:][nz] = np.real(c[nz]) / np.abs(c[nz])
    return mag, cos


def _cross_blocks(y, r):
    """Cell-wise phase cosine of y*conj(r) and per-bin coherence magnitude
    (broadcast over frames)."""
    cross = y * np.conj(r)
    mag = np.abs(cross)
    phasecos = np.zeros(cross.shape)
    nz = mag > 0
    phasecos[nz] = np.real(cross[nz]) / mag[nz]

    num = np.abs(np.sum(cross, axis=0))
    den = np.sqrt(np.sum(np.abs(y) ** 2, axis=0) * np.sum(np.abs(r) ** 2, axis=0))
    coh = np.zeros(y.shape[1])
    ok = den > 0
    coh[ok] = num[ok] / den[ok]
    coherence = np.broadcast_to(coh, cross.shape).copy()
    return phasecos, coherence


def features(*channels):
    """Feature matrix [frames, feature_dim(C)] for aligned spectrograms.

    channels[0] is the microphone; the rest are loudspeaker references.
    Column order is FEATURE_LAYOUT and must not change: the trained models
    and the cross-language consumers depend on it.
    """
    if not channels:
        raise ConfigError("need at least one channel")
    frames = channels[0].frames
    for ch in channels[1:]:
        if ch.frames != frames:
            raise ConfigError(
                f"channel frame counts differ: {ch.frames} vs {frames}"
            )
    data = [ch.data for ch in channels]

    blocks = [_norm_lps(x) for x in data]
    for x in data:
        mag, cos = _frame_correlation(x)
        blocks.append(np.stack([mag, cos], axis=1))
    for r in data[1:]:
        phasecos, coherence = _cross_blocks(data[0], r)
        blocks.append(phasecos)
        blocks.append(coherence)
    return np.concatenate(blocks, axis=1)


# ---------------------------------------------------------------------------
# flat binary matrix container: the feature/spectrogram exchange format.
#
#   HOWLSIM-MAT v1\n
#   rows=<R>\n cols=<C>\n dtype=<f4|c8>\n geometry=<free text>\n
#   ---\n
#   row-major little-endian payload
# ---------------------------------------------------------------------------

_MAT_MAGIC = "HOWLSIM-MAT v1"


def save_matrix(a, path, geometry=""):
    """Write a 2-D real or complex matrix to the exchange container."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ConfigError(f"container holds 2-D matrices, got shape {a.shape}")
    tag = "c8" if np.iscomplexobj(a) else "f4"
    head = io.StringIO()
    head.write(_MAT_MAGIC + "\n")
    head.write(f"rows={a.shape[0]}\n")
    head.write(f"cols={a.shape[1]}\n")
    head.write(f"dtype={tag}\n")
    if geometry:
        head.write(f"geometry={geometry}\n")
    head.write("---\n")
    payload = a.astype("<c8" if tag == "c8" else "<f4").tobytes()
    with open(path, "wb") as f:
        f.write(head.getvalue().encode("utf-8"))
        f.write(payload)


def load_matrix(path):
    """Read a matrix container; returns (matrix, meta dict). Real payloads
    come back float64, complex payloads complex128."""
    with open(path, "rb") as f:
        blob = f.read()
    sep = b"---\n"
    cut = blob.find(sep)
    if cut < 0 or not blob.startswith(_MAT_MAGIC.encode()):
        raise ConfigError(f"{path}: not a matrix container")
    meta = {}
    for line in blob[:cut].decode("utf-8").splitlines()[1:]:
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k] = v
    rows, cols = int(meta["rows"]), int(meta["cols"])
    tag = meta.get("dtype", "f4")
    if tag not in ("f4", "c8"):
        raise ConfigError(f"{path}: unknown dtype tag {tag!r}")
    dtype = "<c8" if tag == "c8" else "<f4"
    payload = blob[cut + len(sep):]
    want = rows * cols * (8 if tag == "c8" else 4)
    if len(payload) != want:
        raise ConfigError(f"{path}: payload is {len(payload)} bytes, expected {want}")
    a = np.frombuffer(payload, dtype=dtype).reshape(rows, cols)
    return a.astype(np.complex128 if tag == "c8" else np.float64), meta


def save_spectrogram(spec, path):
    save_matrix(
        spec.data,
        path,
        geometry=f"spectrogram fft={spec.cfg.fft_size} hop={spec.cfg.hop} origin_len={spec.origin_len}",
    )


def load_spectrogram(path):
    a, meta = load_matrix(path)
    fields = dict(kv.split("=") for kv in meta.get("geometry", "").split()[1:])
    return Spectrogram(
        data=a,
        cfg=FrameConfig(
            fft_size=int(fields["fft"]),
            frame_len=int(fields["fft"]),
            hop=int(fields["hop"]),
        ),
        origin_len=int(fields["origin_len"]),
    )
