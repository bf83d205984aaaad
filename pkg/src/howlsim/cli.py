"""Command-line entry point tying the toolkit together for scripted use.

Subcommands: gen-rir, simulate, make-dataset, evaluate, baseline-run,
features-dump. Every output is deterministic given the seed flags. Exit
codes: 0 success, 1 runtime/I-O failure (structured message on stderr),
2 usage error.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from types import SimpleNamespace

import numpy as np

from .acoustic import generate_rir_set, load_rir_set, random_room, save_rir_set
from .baselines import SUPPRESSOR_NAMES, make_suppressor, run_offline
from .dataset import DatasetManifest, DatasetSpec, evaluate, make_dataset, resolve_threads
from .errors import ConfigError, HowlsimError
from .scene import SceneConfig, mix_teacher_forced, parse_nl_tag, simulate_closed_loop
from .spectral import features, save_matrix, stft
from .synth import synth_speech
from .wavio import SAMPLE_RATE, read_wav, write_wav

# sub-stream tags for the simulate command's synthetic inputs
_TAG_ROOM = 401
_TAG_SPEECH = 402
_TAG_FAR = 403
_TAG_NOISE = 404


@dataclass(frozen=True)
class CliConfig:
    """Global flags shared by the subcommands."""

    seed: int = None
    threads: int = 1
    verbose: bool = False


def _note(cfg, message):
    if cfg.verbose:
        print(message, file=sys.stderr)


def _stream(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def _cmd_gen_rir(args, cfg):
    room = random_room(_stream(args.seed, _TAG_ROOM), rt60=args.rt60, devices=args.devices)
    rir_set = generate_rir_set(room, seed=args.seed)
    save_rir_set(rir_set, args.out)
    _note(cfg, f"wrote {room.devices}-device RIR set (rt60 {room.rt60:g} s) to {args.out}")
    return 0


def _cmd_simulate(args, cfg):
    rirs = load_rir_set(args.rirs)
    n = int(round(args.seconds * SAMPLE_RATE))
    speech = read_wav(args.speech) if args.speech else synth_speech(_stream(args.seed, _TAG_SPEECH), n)
    far = read_wav(args.far) if args.far else 0.5 * synth_speech(_stream(args.seed, _TAG_FAR), n)
    noise = read_wav(args.noise) if args.noise else _stream(args.seed, _TAG_NOISE).standard_normal(n)
    n = min(len(speech), len(far), len(noise))
    speech = args.input_scale * speech[:n]
    far = args.input_scale * far[:n]
    noise = noise[:n]
    scene_cfg = SceneConfig(
        delta_t=args.delta_t,
        nl=(parse_nl_tag("identity"), parse_nl_tag(args.nl2)),
        sfr_db=args.sfr,
        snr_db=args.snr,
        seed=args.seed,
    )
    scene = None
    if args.suppressor == "oracle":
        scene = mix_teacher_forced(speech, far, noise, rirs, scene_cfg)
    suppressor = make_suppressor(args.suppressor, scene=scene)
    mic, out = simulate_closed_loop(
        speech, far, noise, rirs, scene_cfg, suppressor, loop_gain=args.loop_gain
    )
    write_wav(args.out, out)
    if args.save_mic:
        write_wav(args.save_mic, mic)
    _note(cfg, f"simulated {n / SAMPLE_RATE:g} s; transmit peak {np.max(np.abs(out)):.3f}, mic peak {np.max(np.abs(mic)):.3f}")
    return 0


def _cmd_make_dataset(args, cfg):
    spec = DatasetSpec.from_json_file(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    manifest = make_dataset(spec, args.out, threads=cfg.threads)
    print(f"wrote {len(manifest)} scenes and manifest.jsonl to {args.out}")
    return 0


def _cmd_evaluate(args, cfg):
    manifest = DatasetManifest.load(args.manifest)
    report = evaluate(manifest, args.enhanced, cap_db=args.cap, threads=cfg.threads)
    sys.stdout.write(report.text_table())
    if args.report:
        report.save(args.report)
        _note(cfg, f"wrote {args.report} and {args.report}.json")
    return 0


def _cmd_baseline_run(args, cfg):
    manifest = DatasetManifest.load(args.manifest)
    records = manifest.split(args.split)
    if args.scene_id:
        records = tuple(r for r in records if r["scene_id"] == args.scene_id)
    if not records:
        raise ConfigError(f"no scenes selected from split {args.split!r}")
    os.makedirs(args.out, exist_ok=True)

    def enhance(record):
        mic = read_wav(manifest.path_of(record, "y1"))
        refs = {name: read_wav(manifest.path_of(record, name)) for name in ("x", "x21", "x1")}
        scene = None
        if args.suppressor == "oracle":
            scene = SimpleNamespace(s1=read_wav(manifest.path_of(record, "s1")))
        suppressor = make_suppressor(args.suppressor, scene=scene)
        out = run_offline(suppressor, mic, refs)
        write_wav(os.path.join(args.out, f"{record['scene_id']}.wav"), out)

    if cfg.threads == 1:
        for record in records:
            enhance(record)
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            list(pool.map(enhance, records))
    print(f"wrote {len(records)} enhanced scenes to {args.out}")
    return 0


def _cmd_features_dump(args, cfg):
    manifest = DatasetManifest.load(args.manifest)
    records = manifest.split(args.split)
    if args.scene_id:
        records = tuple(r for r in records if r["scene_id"] == args.scene_id)
        if not records:
            raise ConfigError(f"no scene {args.scene_id!r} in split {args.split!r}")
    os.makedirs(args.out, exist_ok=True)
    for record in records:
        channels = [stft(read_wav(manifest.path_of(record, name))) for name in record["channel_layout"]]
        matrix = features(*channels)
        save_matrix(
            matrix,
            os.path.join(args.out, f"{record['scene_id']}.mat"),
            geometry=f"features channels={','.join(record['channel_layout'])}",
        )
    print(f"wrote {len(records)} feature matrices to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="howlsim",
        description="Deterministic hybrid-meeting echo and howling simulator.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="progress notes on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-rir", help="generate and save a room impulse response set")
    p.add_argument("--rt60", type=float, required=True, help="target reverberation time in seconds")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output .rir path")
    p.add_argument("--devices", type=int, default=2)
    p.set_defaults(func=_cmd_gen_rir)

    p = sub.add_parser("simulate", help="run the closed loop with a suppressor in the transmit path")
    p.add_argument("--rirs", required=True, help="RIR set from gen-rir")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="suppressor-output WAV path")
    p.add_argument("--suppressor", default="passthrough", choices=SUPPRESSOR_NAMES)
    p.add_argument("--loop-gain", type=float, default=None, help="rescale the feedback path to this broadband gain")
    p.add_argument("--seconds", type=float, default=6.0)
    p.add_argument("--speech", help="near-speech WAV (default: synthesized from seed)")
    p.add_argument("--far", help="far-end WAV (default: synthesized from seed)")
    p.add_argument("--noise", help="noise WAV (default: white noise from seed)")
    p.add_argument("--delta-t", type=float, default=0.2, help="one-way system delay in seconds")
    p.add_argument("--sfr", type=float, default=0.0, help="signal-to-feedback ratio in dB")
    p.add_argument("--snr", type=float, default=30.0, help="signal-to-noise ratio in dB")
    p.add_argument("--nl2", default="identity", help="device-2 nonlinearity tag, e.g. hard_clip:0.8 or sigmoidal:4")
    p.add_argument("--input-scale", type=float, default=0.3, help="scale applied to speech and far-end input")
    p.add_argument("--save-mic", help="also write the microphone signal to this WAV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("make-dataset", help="build a scene corpus from a JSON spec")
    p.add_argument("--spec", required=True, help="DatasetSpec JSON file")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_make_dataset)

    p = sub.add_parser("evaluate", help="SFR-bucketed SI-SDR report over a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--enhanced", default=None, help="directory of <scene_id>.wav enhanced outputs")
    p.add_argument("--report", default=None, help="write the table here (+ .json twin)")
    p.add_argument("--cap", type=float, default=100.0, help="SI-SDR cap in dB")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("baseline-run", help="run a classical suppressor over a corpus split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--suppressor", required=True, choices=SUPPRESSOR_NAMES)
    p.add_argument("--out", required=True, help="directory for <scene_id>.wav outputs")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--scene-id", default=None, help="restrict to one scene")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_baseline_run)

    p = sub.add_parser("features-dump", help="export per-scene feature matrices for external consumers")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for <scene_id>.mat matrices")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--scene-id", default=None, help="restrict to one scene")
    p.set_defaults(func=_cmd_features_dump)

    return parser


def run(argv=None):
    """Parse argv and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    cfg = CliConfig(
        seed=getattr(args, "seed", None),
        threads=resolve_threads(getattr(args, "threads", None)),
        verbose=args.verbose,
    )
    try:
        return args.func(args, cfg)
    except (HowlsimError, OSError) as exc:
        print(f"howlsim {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
