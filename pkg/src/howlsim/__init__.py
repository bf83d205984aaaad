"""howlsim: deterministic echo and howling simulation for hybrid meetings.

Two co-located conferencing devices share a room: each device's loudspeaker
feeds back into the near microphone directly (echo) and through the other
device's delayed playback (a closed electro-acoustic loop that can howl).
The package builds room impulse responses, mixes labelled teacher-forced
scenes, runs the live closed loop against pluggable suppressors, extracts
the spectral features and losses used to train neural suppressors, ships
classical NLMS/notch baselines, and scores everything with SFR-bucketed
SI-SDR reports.
"""

from .acoustic import (
    Nonlinearity,
    RirSet,
    RoomSpec,
    apply_nonlinearity,
    convolve,
    generate_rir_set,
    load_rir_set,
    measure_rt60,
    random_room,
    save_rir_set,
)
from .baselines import (
    HowlingDetector,
    NlmsNotchSuppressor,
    NlmsSuppressor,
    NotchBank,
    OracleSuppressor,
    PassthroughSuppressor,
    Suppressor,
    make_suppressor,
    run_offline,
)
from .dataset import (
    DatasetManifest,
    DatasetSpec,
    MetricReport,
    draw_scene_params,
    evaluate,
    make_dataset,
    partition_speech,
    scene_scores,
)
from .errors import ConfigError, DegenerateInputError, HowlsimError, UnmeasurableError
from .objectives import LossConfig, corr_loss, loss1, loss2, select_playback, si_sdr, spectral_mae
from .scene import (
    SceneConfig,
    SceneSignals,
    build_leveled_scene,
    export_scene,
    measure_loop_gain,
    mix_teacher_forced,
    simulate_closed_loop,
)
from .spectral import (
    DeepFilter,
    FrameConfig,
    Spectrogram,
    deep_filter_apply,
    feature_dim,
    features,
    istft,
    load_matrix,
    load_spectrogram,
    n_frames,
    save_matrix,
    save_spectrogram,
    stft,
)
from .synth import synth_speech
from .wavio import SAMPLE_RATE, read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "SAMPLE_RATE",
    "ConfigError",
    "DatasetManifest",
    "DatasetSpec",
    "DeepFilter",
    "DegenerateInputError",
    "FrameConfig",
    "HowlingDetector",
    "HowlsimError",
    "LossConfig",
    "MetricReport",
    "NlmsNotchSuppressor",
    "NlmsSuppressor",
    "Nonlinearity",
    "NotchBank",
    "OracleSuppressor",
    "PassthroughSuppressor",
    "RirSet",
    "RoomSpec",
    "SceneConfig",
    "SceneSignals",
    "Spectrogram",
    "Suppressor",
    "UnmeasurableError",
    "apply_nonlinearity",
    "build_leveled_scene",
    "convolve",
    "corr_loss",
    "deep_filter_apply",
    "draw_scene_params",
    "evaluate",
    "export_scene",
    "feature_dim",
    "features",
    "generate_rir_set",
    "istft",
    "load_matrix",
    "load_rir_set",
    "load_spectrogram",
    "loss1",
    "loss2",
    "make_dataset",
    "make_suppressor",
    "measure_loop_gain",
    "measure_rt60",
    "mix_teacher_forced",
    "n_frames",
    "partition_speech",
    "random_room",
    "read_wav",
    "run_offline",
    "save_matrix",
    "save_rir_set",
    "save_spectrogram",
    "scene_scores",
    "select_playback",
    "si_sdr",
    "simulate_closed_loop",
    "spectral_mae",
    "stft",
    "synth_speech",
    "write_wav",
]
