"""Corpus generation and SFR-bucketed evaluation for two-device scenes.

make_dataset turns a directory of 16 kHz mono speech WAVs into a corpus of
simulated scenes — one WAV bundle per scene under ``scenes/<id>/`` plus a
line-delimited JSON manifest — with train/val/test splits that share no
utterance (by content hash) and no room impulse response seed. evaluate
scores enhanced audio against the hidden near speech and reports per-bucket
mean SI-SDR at the pinned test signal-to-feedback ratios.

Manifest record fields (one JSON object per line, keys sorted):
    scene_id, split, channel_layout, sample_rate, num_samples, wavs
    (name -> path relative to the manifest), delta_t, gains, nl1, nl2,
    sfr_db, snr_db, scene_seed, alpha, beta, input_scale, rir_seed, rt60,
    speech_file, far_file, speech_hash, far_hash, far_gain.
"""

import hashlib
import json
import math
import os
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .acoustic import Nonlinearity, generate_rir_set, random_room
from .errors import ConfigError
from .objectives import si_sdr
from .scene import _DECOMP_FIELDS, _EXPORT_FIELDS, SceneConfig, _nl_tag, build_leveled_scene, export_scene
from .wavio import SAMPLE_RATE, read_wav, wav_info

SPLITS = ("train", "val", "test")

CHANNEL_LAYOUTS = (
    ("y1", "x1"),
    ("y1", "x"),
    ("y1", "x21"),
    ("y1", "x", "x21"),
    ("y1", "x21", "x"),
)

DESK_COUNTS = (200, 20, 50)
FULL_COUNTS = (10000, 300, 500)
TEST_SFRS = (-10.0, -5.0, 0.0)
SFR_BUCKET_TOLERANCE = 0.25

_RANGE_BOUNDS = {
    "rt60_range": (0.0, 0.6),
    "delay_range": (0.1, 0.3),
    "sfr_range": (-20.0, 5.0),
    "snr_range": (-10.0, 30.0),
}

# seed-tree tags so RIR, scene-knob, and noise streams never collide
_TAG_RIR = 101
_TAG_SCENE = 202
_TAG_NOISE = 303

_UTTERANCE_RMS = 0.1


@dataclass(frozen=True)
class DatasetSpec:
    """Everything that determines a corpus, bit for bit.

    counts are (train, val, test) scene totals; rir_sets is the number of
    distinct rooms available, split between train/val and test so the two
    never share one. All parameter ranges must stay inside the simulator's
    supported bounds. Test scenes ignore sfr/snr ranges and pin
    test_sfr_values (cycled by scene index) at test_snr_db.
    """

    speech_source: str
    seed: int
    counts: tuple = DESK_COUNTS
    rir_sets: int = 24
    rt60_range: tuple = (0.0, 0.6)
    delay_range: tuple = (0.1, 0.3)
    sfr_range: tuple = (-20.0, 5.0)
    snr_range: tuple = (-10.0, 30.0)
    channel_layout: tuple = ("y1", "x1")
    scene_seconds: float = 8.0
    test_sfr_values: tuple = TEST_SFRS
    test_snr_db: float = 30.0

    def __post_init__(self):
        for name in ("counts", "rt60_range", "delay_range", "sfr_range", "snr_range", "channel_layout", "test_sfr_values"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.counts) != 3 or any(int(c) != c or c < 0 for c in self.counts):
            raise ConfigError(f"counts must be three non-negative integers, got {self.counts}")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if sum(self.counts) == 0:
            raise ConfigError("counts request an empty corpus")
        if int(self.rir_sets) != self.rir_sets or self.rir_sets < 1:
            raise ConfigError(f"rir_sets must be a positive integer, got {self.rir_sets}")
        object.__setattr__(self, "rir_sets", int(self.rir_sets))
        for name, (lo, hi) in _RANGE_BOUNDS.items():
            rng = getattr(self, name)
            if len(rng) != 2 or not (lo <= rng[0] <= rng[1] <= hi):
                raise ConfigError(f"{name} must be an ordered pair within [{lo}, {hi}], got {rng}")
        if self.channel_layout not in CHANNEL_LAYOUTS:
            known = ", ".join("/".join(l) for l in CHANNEL_LAYOUTS)
            raise ConfigError(f"channel_layout {self.channel_layout} not one of {known}")
        if self.scene_seconds < 2.0:
            raise ConfigError(f"scene_seconds must be at least 2, got {self.scene_seconds}")
        if not self.test_sfr_values:
            raise ConfigError("test_sfr_values must be non-empty")
        lo, hi = _RANGE_BOUNDS["sfr_range"]
        if any(not (lo <= v <= hi) for v in self.test_sfr_values):
            raise ConfigError(f"test_sfr_values must lie within [{lo}, {hi}]")
        lo, hi = _RANGE_BOUNDS["snr_range"]
        if not (lo <= self.test_snr_db <= hi):
            raise ConfigError(f"test_snr_db must lie within [{lo}, {hi}]")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def num_samples(self):
        return int(round(self.scene_seconds * SAMPLE_RATE))

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a plain dict (e.g. parsed JSON). full_scale=true selects
        the full 10000/300/500 split unless counts are given explicitly."""
        data = dict(mapping)
        full = bool(data.pop("full_scale", False))
        if full and "counts" not in data:
            data["counts"] = FULL_COUNTS
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown dataset spec fields: {', '.join(unknown)}")
        missing = [name for name in ("speech_source", "seed") if name not in data]
        if missing:
            raise ConfigError(f"dataset spec missing required fields: {', '.join(missing)}")
        if "channel_layout" in data:
            data["channel_layout"] = tuple(data["channel_layout"])
        return cls(**data)

    @classmethod
    def from_json_file(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: dataset spec must be a JSON object")
        return cls.from_mapping(data)


def _utterance_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def partition_speech(directory, counts):
    """Deterministic content-hash split of the WAV files in directory.

    Files with identical bytes share a hash and always land in the same
    split, so no utterance can leak across splits even if duplicated under
    different names. Returns ({split: [filename, ...]}, {filename: hash});
    every split with a non-zero scene count receives at least one file.
    """
    if not os.path.isdir(directory):
        raise ConfigError(f"speech source {directory!r} is not a directory")
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".wav"))
    if not names:
        raise ConfigError(f"speech source {directory!r} contains no WAV files")
    digest_of = {n: _utterance_hash(os.path.join(directory, n)) for n in names}
    groups = {}
    for name in names:
        groups.setdefault(digest_of[name], []).append(name)
    digests = sorted(groups)
    needed = [s for s, c in zip(SPLITS, counts) if c > 0]
    if len(digests) < len(needed):
        raise ConfigError(
            f"speech source has {len(digests)} distinct utterance(s) but "
            f"{len(needed)} split(s) need disjoint files"
        )
    # one group per needed split up front, remainder by largest fraction
    weights = [c for s, c in zip(SPLITS, counts) if c > 0]
    shares = [1] * len(needed)
    spare = len(digests) - len(needed)
    total = sum(weights)
    quotas = [spare * w / total for w in weights]
    shares = [s + int(q) for s, q in zip(shares, quotas)]
    leftover = spare - sum(int(q) for q in quotas)
    order = sorted(range(len(needed)), key=lambda i: (-(quotas[i] - int(quotas[i])), i))
    for i in order[:leftover]:
        shares[i] += 1
    files_by_split = {s: [] for s in SPLITS}
    pos = 0
    for split, share in zip(needed, shares):
        for digest in digests[pos : pos + share]:
            files_by_split[split].extend(groups[digest])
        files_by_split[split].sort()
        pos += share
    return files_by_split, digest_of


def _rir_pools(spec):
    """Disjoint RIR seed pools: {split: range}. Test rooms never overlap
    train/val rooms (and vice versa) whenever both sides request scenes."""
    n_tv = spec.counts[0] + spec.counts[1]
    n_te = spec.counts[2]
    if n_tv and n_te:
        if spec.rir_sets < 2:
            raise ConfigError("rir_sets must be at least 2 to keep test rooms disjoint")
        share = round(spec.rir_sets * n_te / (n_tv + n_te))
        share = max(1, min(spec.rir_sets - 1, share))
        tv, te = range(0, spec.rir_sets - share), range(spec.rir_sets - share, spec.rir_sets)
    elif n_te:
        tv, te = range(0), range(spec.rir_sets)
    else:
        tv, te = range(spec.rir_sets), range(0)
    return {"train": tv, "val": tv, "test": te}


def build_rir_set(spec, rir_seed):
    """The corpus RIR set for one pool index: room and reverberation drawn
    from the (dataset seed, index) stream, independent of scene order."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _TAG_RIR, rir_seed]))
    rt60 = float(rng.uniform(*spec.rt60_range))
    room = random_room(rng, rt60=rt60)
    return generate_rir_set(room, seed=int(rng.integers(0, 2**31 - 1)))


def draw_scene_params(spec, split, index):
    """All random knobs of one scene, as a plain dict.

    Depends only on (spec.seed, split, index) — never on counts or on other
    scenes — so parameter distributions can be audited without building any
    audio. Test scenes draw from the same streams (keeping them aligned
    across splits) and then pin SFR/SNR to the test grid.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    if index < 0:
        raise ConfigError("scene index must be non-negative")
    seq = np.random.SeedSequence([spec.seed, _TAG_SCENE, SPLITS.index(split), index])
    rng = np.random.default_rng(seq)
    params = {
        "delta_t": float(rng.uniform(*spec.delay_range)),
        "sfr_db": float(rng.uniform(*spec.sfr_range)),
        "snr_db": float(rng.uniform(*spec.snr_range)),
    }
    if split == "test":
        params["sfr_db"] = float(spec.test_sfr_values[index % len(spec.test_sfr_values)])
        params["snr_db"] = float(spec.test_snr_db)
    if rng.random() < 0.5:
        params["nl2"] = Nonlinearity("hard_clip", clip_threshold=float(rng.uniform(0.6, 0.95)))
    else:
        params["nl2"] = Nonlinearity("sigmoidal", sigmoid_gain=float(rng.uniform(2.0, 6.0)))
    params.update(
        rir_u=float(rng.random()),
        speech_u=float(rng.random()),
        far_u=float(rng.random()),
        speech_crop_u=float(rng.random()),
        far_crop_u=float(rng.random()),
        far_gain=float(rng.uniform(0.25, 1.0)),
        noise_seed=int(rng.integers(0, 2**31 - 1)),
        scene_seed=int(rng.integers(0, 2**31 - 1)),
    )
    return params


def _load_utterance(path, n_samples, crop_u):
    """A length-n_samples cut of the utterance at RMS 0.1. Short files are
    tiled before cropping; crop_u in [0, 1) picks the offset."""
    x = read_wav(path)
    if x.size == 0:
        raise ConfigError(f"utterance {path} is empty")
    if len(x) < n_samples:
        x = np.tile(x, int(math.ceil(n_samples / len(x))))
    span = len(x) - n_samples
    off = min(int(crop_u * (span + 1)), span)
    seg = np.array(x[off : off + n_samples])
    rms = float(np.sqrt(np.mean(seg * seg)))
    if rms == 0.0:
        seg = np.array(x[:n_samples])
        rms = float(np.sqrt(np.mean(seg * seg)))
    if rms == 0.0:
        raise ConfigError(f"utterance {path} is silent")
    return seg * (_UTTERANCE_RMS / rms)


def _pick(files, u):
    return files[min(int(u * len(files)), len(files) - 1)]


def _build_scene(spec, split, index, files, digest_of, get_rirs, out_dir):
    params = draw_scene_params(spec, split, index)
    pool = _rir_pools(spec)[split]
    rir_seed = pool[min(int(params["rir_u"] * len(pool)), len(pool) - 1)]
    rirs = get_rirs(rir_seed)

    speech_file = _pick(files, params["speech_u"])
    far_file = _pick(files, params["far_u"])
    if far_file == speech_file and len(files) > 1:
        far_file = files[(files.index(far_file) + 1) % len(files)]
    n = spec.num_samples
    speech = _load_utterance(os.path.join(spec.speech_source, speech_file), n, params["speech_crop_u"])
    far = params["far_gain"] * _load_utterance(
        os.path.join(spec.speech_source, far_file), n, params["far_crop_u"]
    )
    noise_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _TAG_NOISE, params["noise_seed"]]))
    noise = noise_rng.standard_normal(n)

    cfg = SceneConfig(
        delta_t=params["delta_t"],
        gains=(1.0, 1.0),
        nl=(Nonlinearity("identity"), params["nl2"]),
        sfr_db=params["sfr_db"],
        snr_db=params["snr_db"],
        seed=params["scene_seed"],
    )
    signals, input_scale = build_leveled_scene(speech, far, noise, rirs, cfg)

    scene_id = f"{split}-{index:05d}"
    rel_dir = f"scenes/{scene_id}"
    export_scene(
        signals,
        cfg,
        os.path.join(out_dir, "scenes", scene_id),
        include_decomposition=True,
        extras={
            "scene_id": scene_id,
            "split": split,
            "rir_seed": rir_seed,
            "speech_file": speech_file,
            "far_file": far_file,
            "input_scale": repr(input_scale),
            "channel_layout": ",".join(spec.channel_layout),
        },
    )
    return {
        "scene_id": scene_id,
        "split": split,
        "channel_layout": list(spec.channel_layout),
        "sample_rate": SAMPLE_RATE,
        "num_samples": n,
        "wavs": {name: f"{rel_dir}/{name}.wav" for name in _EXPORT_FIELDS + _DECOMP_FIELDS},
        "delta_t": cfg.delta_t,
        "gains": list(cfg.gains),
        "nl1": _nl_tag(cfg.nl[0]),
        "nl2": _nl_tag(cfg.nl[1]),
        "sfr_db": cfg.sfr_db,
        "snr_db": cfg.snr_db,
        "scene_seed": cfg.seed,
        "alpha": float(signals.alpha),
        "beta": float(signals.beta),
        "input_scale": float(input_scale),
        "rir_seed": int(rir_seed),
        "rt60": float(rirs.room.rt60),
        "speech_file": speech_file,
        "far_file": far_file,
        "speech_hash": digest_of[speech_file],
        "far_hash": digest_of[far_file],
        "far_gain": params["far_gain"],
    }


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered scene records plus the directory their paths are relative to.

    The on-disk form is one JSON object per line with sorted keys; records
    are never rewritten once emitted.
    """

    records: tuple
    root: str = "."

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r["scene_id"] for r in self.records]
        if len(set(ids)) != len(ids):
            raise ConfigError("manifest contains duplicate scene ids")

    def __len__(self):
        return len(self.records)

    def split(self, name):
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}")
        return tuple(r for r in self.records if r["split"] == name)

    def path_of(self, record, wav_name):
        try:
            rel = record["wavs"][wav_name]
        except KeyError:
            raise ConfigError(f"scene {record['scene_id']} has no channel {wav_name!r}") from None
        return os.path.join(self.root, rel)

    def save(self, path):
        lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path):
        records = []
        with open(path, "r", encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}:{ln}: invalid manifest line ({exc})") from None
        return cls(records=tuple(records), root=os.path.dirname(os.path.abspath(path)))

    def validate(self):
        """Check every referenced WAV exists and is 16 kHz mono (headers only)."""
        for record in self.records:
            for name, rel in sorted(record["wavs"].items()):
                path = os.path.join(self.root, rel)
                if not os.path.isfile(path):
                    raise ConfigError(f"scene {record['scene_id']}: missing WAV {rel}")
                sr, channels, _ = wav_info(path)
                if sr != SAMPLE_RATE or channels != 1:
                    raise ConfigError(
                        f"scene {record['scene_id']}: {rel} is {sr} Hz / {channels} ch, "
                        f"expected {SAMPLE_RATE} Hz mono"
                    )


def resolve_threads(value=None):
    """Worker count: explicit value, else HOWLSIM_THREADS, else logical cores."""
    if value is None:
        value = os.environ.get("HOWLSIM_THREADS", "").strip() or (os.cpu_count() or 1)
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"thread count must be positive, got {n}")
    return n


def make_dataset(spec, out_dir, threads=None):
    """Build the corpus under out_dir and return its manifest.

    Byte-deterministic for a given spec: scene audio, sidecars, and the
    manifest (written to out_dir/manifest.jsonl) only depend on the spec.
    Scene builds run on a thread pool; records are reduced in scene-id order
    regardless of completion order.
    """
    threads = resolve_threads(threads)
    files_by_split, digest_of = partition_speech(spec.speech_source, spec.counts)
    os.makedirs(out_dir, exist_ok=True)

    cache = {}
    lock = threading.Lock()

    def get_rirs(rir_seed):
        with lock:
            if rir_seed in cache:
                return cache[rir_seed]
        built = build_rir_set(spec, rir_seed)
        with lock:
            return cache.setdefault(rir_seed, built)

    jobs = [
        (split, i)
        for split, count in zip(SPLITS, spec.counts)
        for i in range(count)
    ]

    def build(job):
        split, i = job
        return _build_scene(spec, split, i, files_by_split[split], digest_of, get_rirs, out_dir)

    if threads == 1:
        records = [build(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(build, jobs))
    records.sort(key=lambda r: r["scene_id"])
    manifest = DatasetManifest(records=tuple(records), root=os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, "manifest.jsonl"))
    return manifest


def scene_scores(manifest, enhanced_dir=None, cap_db=100.0, split="test", threads=1):
    """Per-scene SI-SDR rows, sorted by scene id.

    Each row holds scene_id, sfr_db and unprocessed (microphone vs near
    speech); with enhanced_dir also processed (enhanced vs near speech).
    Scenes whose enhanced WAV is missing are excluded and returned in the
    second element, after a warning. Scoring may run on a thread pool; the
    reduction is always in scene-id order.
    """

    def score(record):
        scene_id = record["scene_id"]
        row = {"scene_id": scene_id, "sfr_db": float(record["sfr_db"])}
        s1 = read_wav(manifest.path_of(record, "s1"))
        y1 = read_wav(manifest.path_of(record, "y1"))
        if enhanced_dir is not None:
            path = os.path.join(enhanced_dir, f"{scene_id}.wav")
            if not os.path.isfile(path):
                warnings.warn(f"missing enhanced WAV for scene {scene_id}; excluding it")
                return None
            enhanced = read_wav(path)
            m = min(len(enhanced), len(s1))
            row["processed"] = si_sdr(enhanced[:m], s1[:m], cap_db=cap_db)
        row["unprocessed"] = si_sdr(y1, s1, cap_db=cap_db)
        return row

    records = sorted(manifest.split(split), key=lambda r: r["scene_id"])
    if threads == 1:
        scored = [score(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score, records))
    rows = [row for row in scored if row is not None]
    missing = [r["scene_id"] for r, row in zip(records, scored) if row is None]
    return rows, missing


@dataclass(frozen=True)
class MetricReport:
    """Per-SFR-bucket mean SI-SDR table plus the scenes excluded for
    missing enhanced audio. processed is None when nothing was scored."""

    buckets: tuple
    missing: tuple = ()
    cap_db: float = 100.0

    @property
    def total(self):
        return sum(b["count"] for b in self.buckets)

    def bucket(self, sfr_db):
        for b in self.buckets:
            if b["sfr_db"] == sfr_db:
                return b
        raise ConfigError(f"no bucket at SFR {sfr_db} dB")

    def text_table(self):
        def row(label, values):
            return f"{label:<12}" + "".join(f"{v:>10}" for v in values)

        def num(v):
            return "n/a" if v is None else f"{v:.2f}"

        lines = [
            row("SFR (dB)", [f"{b['sfr_db']:.2f}" for b in self.buckets]),
            row("Unprocessed", [num(b["unprocessed"]) for b in self.buckets]),
            row("Enhanced", [num(b["processed"]) for b in self.buckets]),
            row("Scenes", [b["count"] for b in self.buckets]),
        ]
        if self.missing:
            lines.append(f"Excluded (missing enhanced audio): {', '.join(self.missing)}")
        return "\n".join(lines) + "\n"

    def to_mapping(self):
        return {
            "cap_db": self.cap_db,
            "buckets": [dict(b) for b in self.buckets],
            "missing": list(self.missing),
        }

    def save(self, path):
        """Aligned text table at path, machine-readable twin at path + '.json'."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.text_table())
        with open(path + ".json", "w", encoding="utf-8") as f:
            json.dump(self.to_mapping(), f, sort_keys=True, indent=2)
            f.write("\n")


def evaluate(manifest, enhanced_dir=None, cap_db=100.0, centers=TEST_SFRS, tolerance=SFR_BUCKET_TOLERANCE, split="test", threads=1):
    """SFR-bucketed mean SI-SDR over the manifest's test scenes.

    Buckets sit at centers +/- tolerance and must be disjoint; scenes outside
    every bucket are ignored. Reduction is order-independent: rows are
    grouped and averaged in scene-id order whatever order the manifest
    stores. Without enhanced_dir only the unprocessed column is filled.
    """
    centers = tuple(sorted(float(c) for c in centers))
    for a, b in zip(centers, centers[1:]):
        if b - a <= 2 * tolerance:
            raise ConfigError("SFR buckets overlap; raise spacing or lower tolerance")
    rows, missing = scene_scores(manifest, enhanced_dir, cap_db=cap_db, split=split, threads=threads)
    buckets = []
    for center in centers:
        hit = [r for r in rows if abs(r["sfr_db"] - center) <= tolerance]
        bucket = {"sfr_db": center, "count": len(hit)}
        for key in ("unprocessed", "processed"):
            values = [r[key] for r in hit if key in r]
            bucket[key] = float(np.mean(values)) if values else None
        buckets.append(bucket)
    return MetricReport(buckets=tuple(buckets), missing=tuple(missing), cap_db=cap_db)
