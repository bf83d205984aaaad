"""Room acoustics: image-method impulse responses, loudspeaker nonlinearities,
convolution, and reverberation-time measurement.

A two-device scene carries six paths per RIR set, keyed (emitter, receiver):

    (0, 1), (0, 2)   near-end talker rendered into each device microphone
    (1, 1), (2, 1)   device loudspeakers into microphone 1
    (1, 2), (2, 2)   device loudspeakers into microphone 2

Emitter 0 is the talker; emitters 1..J are device loudspeakers. Receivers are
the J device microphones. The scene generator consumes (0,1), (0,2), (1,1)
and (2,1); the device-2 mic paths are generated for completeness.

Wall reflectivity is a single scalar seeded from the requested RT60 through
Eyring's formula, then calibrated against a measured trial response so the
generated decay lands on the request. A (room, seed) pair pins the whole set.
Image delays are rounded to the nearest sample: reproducibility over
sub-sample fidelity.
"""

import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, DegenerateInputError, UnmeasurableError

SPEED_OF_SOUND = 343.0
SAMPLE_RATE = 16000

# RIR taps below this level relative to the h11 direct tap are trimmed.
TAIL_FLOOR_DB = -60.0


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room with one talker, J loudspeakers and J microphones.

    source_positions[0] is the talker; source_positions[1:] are the device
    loudspeakers, one per device. mic_positions holds the device microphones.
    """

    dimensions: tuple
    source_positions: tuple
    mic_positions: tuple
    rt60: float
    sample_rate: int = SAMPLE_RATE
    max_rir_length: int = SAMPLE_RATE  # 1 s cap

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ConfigError(f"room dimensions must be 3 positive numbers, got {self.dimensions}")
        if not (0.0 <= self.rt60 <= 0.6):
            raise ConfigError(f"rt60 must lie in [0, 0.6] s, got {self.rt60}")
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigError(f"sample rate is fixed at {SAMPLE_RATE} Hz")
        if self.max_rir_length < 1:
            raise ConfigError("max_rir_length must be positive")
        for name, plist in (("source", self.source_positions), ("mic", self.mic_positions)):
            for p in plist:
                p = np.asarray(p, dtype=float)
                if p.shape != (3,):
                    raise ConfigError(f"{name} position must be a 3-vector, got {p}")
                if np.any(p <= 0) or np.any(p >= dims):
                    raise ConfigError(f"{name} position {tuple(p)} outside room {tuple(dims)}")

    @property
    def devices(self):
        return len(self.mic_positions)


@dataclass(frozen=True)
class Nonlinearity:
    """Memoryless loudspeaker/amplifier distortion.

    kind: 'identity', 'hard_clip' (saturate at +-clip_threshold) or
    'sigmoidal' (odd saturating curve 2/(1+exp(-a*x)) - 1 with a=sigmoid_gain).
    """

    kind: str = "identity"
    clip_threshold: float = 0.8
    sigmoid_gain: float = 4.0

    def __post_init__(self):
        if self.kind not in ("identity", "hard_clip", "sigmoidal"):
            raise ConfigError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "hard_clip" and self.clip_threshold <= 0:
            raise ConfigError("clip_threshold must be positive")
        if self.kind == "sigmoidal" and self.sigmoid_gain <= 0:
            raise ConfigError("sigmoid_gain must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "hard_clip":
            return np.clip(x, -self.clip_threshold, self.clip_threshold)
        return 2.0 / (1.0 + np.exp(-self.sigmoid_gain * x)) - 1.0

    @property
    def small_signal_slope(self):
        """Derivative at 0: the gain this curve applies to quiet signals."""
        if self.kind == "sigmoidal":
            return self.sigmoid_gain / 2.0
        return 1.0


def apply_nonlinearity(x, nl, gain=1.0):
    """NL(gain * x), elementwise, same length as x."""
    return nl(gain * np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class RirSet:
    """All acoustic paths of one scene. h maps (emitter, receiver) -> float64 taps."""

    h: dict
    room: RoomSpec
    seed: int
    _paths: tuple = field(default=(), repr=False)

    def path(self, emitter, receiver):
        try:
            return self.h[(emitter, receiver)]
        except KeyError:
            raise ConfigError(f"no path ({emitter}, {receiver}) in RIR set") from None

    @property
    def devices(self):
        return self.room.devices


def _eyring_reflectivity(room):
    """Uniform wall amplitude reflection coefficient for the requested RT60."""
    if room.rt60 == 0.0:
        return 0.0
    dims = np.asarray(room.dimensions, dtype=float)
    volume = float(np.prod(dims))
    surface = 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2])
    absorption = 1.0 - math.exp(-0.161 * volume / (surface * room.rt60))
    beta = math.sqrt(1.0 - absorption)
    if beta >= 1.0:
        raise ConfigError(f"rt60={room.rt60} yields wall reflectivity >= 1 for this room")
    return beta


def _image_rir(src, mic, dims, beta, n_samples, fs):
    """Image-method RIR from one source to one mic, nearest-sample tap placement."""
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    h = np.zeros(n_samples)
    if beta == 0.0:
        d = float(np.linalg.norm(src - mic))
        idx = int(round(d / SPEED_OF_SOUND * fs))
        if idx < n_samples:
            h[idx] = 1.0 / (4.0 * math.pi * d)
        return h

    max_dist = (n_samples - 1) / fs * SPEED_OF_SOUND
    order = np.ceil(max_dist / (2.0 * dims)).astype(int) + 1
    grids = [np.arange(-o, o + 1) for o in order]
    # image positions per axis: (1-2p)*src + 2*r*L, reflection count |r+p| + |r|
    axes_pos = []
    axes_cnt = []
    for ax in range(3):
        r = grids[ax]
        pos_p0 = src[ax] + 2.0 * r * dims[ax]
        pos_p1 = -src[ax] + 2.0 * r * dims[ax]
        cnt_p0 = 2 * np.abs(r)
        cnt_p1 = np.abs(r + 1) + np.abs(r)
        axes_pos.append((pos_p0, pos_p1))
        axes_cnt.append((cnt_p0, cnt_p1))

    for px, py, pz in itertools.product((0, 1), repeat=3):
        dx = axes_pos[0][px] - mic[0]
        dy = axes_pos[1][py] - mic[1]
        dz = axes_pos[2][pz] - mic[2]
        cnt = (
            axes_cnt[0][px][:, None, None]
            + axes_cnt[1][py][None, :, None]
            + axes_cnt[2][pz][None, None, :]
        )
        dist = np.sqrt(
            dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2
        )
        # each bounce flips polarity: reflectivity acts as -beta
        amp = (-beta) ** cnt / (4.0 * math.pi * np.maximum(dist, 1e-3))
        idx = np.round(dist / SPEED_OF_SOUND * fs).astype(np.int64)
        keep = idx < n_samples
        h += np.bincount(idx[keep].ravel(), weights=amp[keep].ravel(), minlength=n_samples)
    return h


def generate_rir_set(room, seed):
    """Generate the full path set for a room. Deterministic in (room, seed).

    The set is scaled so the direct-path tap of path (1,1) has magnitude 1;
    relative gains between paths are preserved. Tails below -60 dB of that
    tap are trimmed.
    """
    fs = room.sample_rate
    beta = _eyring_reflectivity(room)
    # tail length: the -60 dB point is rt60 by definition; margin for the
    # slower-than-predicted late decay of the image model
    n_samples = int(round((room.rt60 * 1.4) * fs)) + 1
    # always long enough for every direct path
    for s in room.source_positions:
        for m in room.mic_positions:
            d = float(np.linalg.norm(np.asarray(s, float) - np.asarray(m, float)))
            n_samples = max(n_samples, int(round(d / SPEED_OF_SOUND * fs)) + 1)
    n_samples = min(n_samples, room.max_rir_length)

    # The image model in a shoebox decays slower than the mean-free-path
    # prediction behind Eyring's formula (near-axial image sequences dominate
    # late energy), so calibrate the reflectivity against a measured trial
    # response. ln(beta) scales inversely with decay time.
    if beta > 0.0 and room.rt60 >= 0.05:
        dims = np.asarray(room.dimensions, dtype=float)
        src, mic = room.source_positions[1], room.mic_positions[0]
        for _ in range(3):
            trial = _image_rir(src, mic, dims, beta, n_samples, fs)
            try:
                measured = measure_rt60(trial, fs)
            except (UnmeasurableError, DegenerateInputError):
                break
            if abs(measured - room.rt60) <= 0.05 * room.rt60:
                break
            beta = min(math.exp(math.log(beta) * measured / room.rt60), 0.9999)

    h = {}
    for j, src in enumerate(room.source_positions):
        for i, mic in enumerate(room.mic_positions, start=1):
            h[(j, i)] = _image_rir(src, mic, np.asarray(room.dimensions, float), beta, n_samples, fs)

    d11 = float(
        np.linalg.norm(
            np.asarray(room.source_positions[1], float) - np.asarray(room.mic_positions[0], float)
        )
    )
    direct_idx = int(round(d11 / SPEED_OF_SOUND * fs))
    direct_amp = abs(h[(1, 1)][direct_idx])
    if direct_amp == 0.0:
        raise ConfigError("h11 direct-path tap fell outside the RIR buffer")
    floor = 10.0 ** (TAIL_FLOOR_DB / 20.0)
    out = {}
    for key, resp in h.items():
        resp = resp / direct_amp
        above = np.nonzero(np.abs(resp) >= floor)[0]
        last = above[-1] + 1 if len(above) else 1
        out[key] = np.ascontiguousarray(resp[:last])
    return RirSet(h=out, room=room, seed=seed)


def random_room(rng, rt60, devices=2, max_rir_length=SAMPLE_RATE):
    """Draw a plausible meeting-room geometry. rng is a numpy Generator."""
    dims = (
        float(rng.uniform(4.0, 8.0)),
        float(rng.uniform(3.0, 6.0)),
        float(rng.uniform(2.5, 4.0)),
    )

    def point(margin=0.5):
        return tuple(float(rng.uniform(margin, d - margin)) for d in dims)

    def separated(existing, min_dist=0.4):
        for _ in range(200):
            p = point()
            if all(np.linalg.norm(np.subtract(p, q)) >= min_dist for q in existing):
                return p
        return point()

    placed = []
    talker = separated(placed)
    placed.append(talker)
    speakers = []
    mics = []
    for _ in range(devices):
        s = separated(placed)
        placed.append(s)
        speakers.append(s)
        # the device microphone sits near its loudspeaker
        for _ in range(200):
            m = tuple(
                float(np.clip(s[k] + rng.uniform(-0.3, 0.3), 0.2, dims[k] - 0.2))
                for k in range(3)
            )
            if np.linalg.norm(np.subtract(m, s)) >= 0.1:
                break
        placed.append(m)
        mics.append(m)
    return RoomSpec(
        dimensions=dims,
        source_positions=tuple([talker] + speakers),
        mic_positions=tuple(mics),
        rt60=float(rt60),
        max_rir_length=max_rir_length,
    )


def convolve(x, h):
    """Full linear convolution of x with h, truncated to len(x)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.size == 0 or h.size == 0:
        raise DegenerateInputError("convolve requires non-empty inputs")
    return fftconvolve(x, h)[: len(x)]


def measure_rt60(h, sample_rate=SAMPLE_RATE):
    """RT60 from Schroeder backward integration.

    Fits a line to the -5..-35 dB span of the energy-decay curve and
    extrapolates to -60 dB. A response with no decay span (single impulse)
    measures 0 s; a span shorter than 10 ms raises UnmeasurableError.
    """
    h = np.asarray(h, dtype=np.float64)
    energy = float(np.dot(h, h))
    if h.size == 0 or energy == 0.0:
        raise DegenerateInputError("measure_rt60 requires a response with energy")
    edc = np.cumsum((h * h)[::-1])[::-1] / energy
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(edc)
    inside = np.nonzero((edc_db <= -5.0) & (edc_db >= -35.0))[0]
    if len(inside) == 0:
        return 0.0
    if len(inside) < int(0.010 * sample_rate):
        raise UnmeasurableError("decay segment shorter than 10 ms")
    t = inside / sample_rate
    slope, intercept = np.polyfit(t, edc_db[inside], 1)
    if slope >= 0:
        raise UnmeasurableError("energy-decay curve does not decay")
    return float(-60.0 / slope)


# ---------------------------------------------------------------------------
# single-file container: text header, then per-path float32 LE sample arrays
# in header order. Layout:
#
#   HOWLSIM-RIR v1\n
#   key=value lines (sample_rate, devices, seed, rt60, max_rir_length,
#                    dims, src<j>, mic<i>)
#   path emitter=<j> receiver=<i> len=<n>   (one line per path)
#   ---\n
#   <float32 little-endian samples, concatenated in path-line order>
# ---------------------------------------------------------------------------

_MAGIC = "HOWLSIM-RIR v1"


def _fmt_vec(v):
    return " ".join(repr(float(c)) for c in v)


def save_rir_set(rs, path):
    """Write a RirSet to the single-file container format."""
    head = io.StringIO()
    head.write(_MAGIC + "\n")
    head.write(f"sample_rate={rs.room.sample_rate}\n")
    head.write(f"devices={rs.room.devices}\n")
    head.write(f"seed={rs.seed}\n")
    head.write(f"rt60={rs.room.rt60!r}\n")
    head.write(f"max_rir_length={rs.room.max_rir_length}\n")
    head.write(f"dims={_fmt_vec(rs.room.dimensions)}\n")
    for j, s in enumerate(rs.room.source_positions):
        head.write(f"src{j}={_fmt_vec(s)}\n")
    for i, m in enumerate(rs.room.mic_positions, start=1):
        head.write(f"mic{i}={_fmt_vec(m)}\n")
    keys = sorted(rs.h.keys())
    for j, i in keys:
        head.write(f"path emitter={j} receiver={i} len={len(rs.h[(j, i)])}\n")
    head.write("---\n")
    with open(path, "wb") as f:
        f.write(head.getvalue().encode("utf-8"))
        for key in keys:
            f.write(rs.h[key].astype("<f4").tobytes())


def load_rir_set(path):
    """Read a RirSet container written by save_rir_set."""
    with open(path, "rb") as f:
        blob = f.read()
    sep = b"---\n"
    cut = blob.find(sep)
    if cut < 0 or not blob.startswith(_MAGIC.encode()):
        raise ConfigError(f"{path}: not a RIR container")
    header = blob[:cut].decode("utf-8").splitlines()[1:]
    payload = blob[cut + len(sep):]

    meta = {}
    paths = []
    for line in header:
        if line.startswith("path "):
            fields = dict(kv.split("=") for kv in line[5:].split())
            paths.append((int(fields["emitter"]), int(fields["receiver"]), int(fields["len"])))
        elif "=" in line:
            k, v = line.split("=", 1)
            meta[k] = v

    def vec(key):
        return tuple(float(c) for c in meta[key].split())

    devices = int(meta["devices"])
    room = RoomSpec(
        dimensions=vec("dims"),
        source_positions=tuple(vec(f"src{j}") for j in range(devices + 1)),
        mic_positions=tuple(vec(f"mic{i}") for i in range(1, devices + 1)),
        rt60=float(meta["rt60"]),
        sample_rate=int(meta["sample_rate"]),
        max_rir_length=int(meta["max_rir_length"]),
    )
    h = {}
    offset = 0
    for j, i, n in paths:
        raw = payload[offset : offset + 4 * n]
        if len(raw) != 4 * n:
            raise ConfigError(f"{path}: truncated payload")
        h[(j, i)] = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        offset += 4 * n
    return RirSet(h=h, room=room, seed=int(meta["seed"]))
