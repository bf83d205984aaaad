"""Training losses and the SI-SDR evaluation metric.

loss1 couples a waveform term (negative SI-SDR) with a spectral magnitude
term; loss2 adds a correlation penalty that pushes the estimate's residual
away from the loudspeaker playback. The playback reference comes in four
variants selected by name, matching the simulator's scene decompositions.

All functions are pure and stateless. The correlation is absolute Pearson at
zero lag on mean-removed signals (estimates and targets are time-aligned by
construction, so no lag search).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError

PLAYBACK_SELECTORS = ("d21", "d21_s", "d21+d11", "d21_s+d11_s")


@dataclass(frozen=True)
class LossConfig:
    """Weights and options for the loss family.

    mae_weight scales the spectral-magnitude MAE inside loss1 (default 10000,
    sized for MAE averaged over cells, not summed). corr_weight scales the
    correlation penalty inside loss2 (default 10).
    """

    mae_weight: float = 10000.0
    corr_weight: float = 10.0
    playback_selector: str = "d21"
    si_sdr_cap_db: float = 100.0

    def __post_init__(self):
        if self.mae_weight < 0 or self.corr_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.playback_selector not in PLAYBACK_SELECTORS:
            raise ConfigError(
                f"playback_selector must be one of {PLAYBACK_SELECTORS}, "
                f"got {self.playback_selector!r}"
            )
        if self.si_sdr_cap_db <= 0:
            raise ConfigError("si_sdr_cap_db must be positive")


def _as_wave(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError(f"{name} must be a mono waveform")
    return x


def si_sdr(est, ref, cap_db=100.0):
    """Scale-invariant signal-to-distortion ratio in dB, capped at +-cap_db.

    The estimate is projected onto the reference; the ratio of projected
    energy to residual energy is the score. A zero estimate scores -cap_db.
    """
    est = _as_wave(est, "est")
    ref = _as_wave(ref, "ref")
    if len(est) != len(ref):
        raise ConfigError(f"length mismatch: {len(est)} vs {len(ref)}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise DegenerateInputError("si_sdr reference has zero energy")
    scale = float(np.dot(est, ref)) / ref_energy
    target = scale * ref
    residual = est - target
    et = float(np.dot(target, target))
    er = float(np.dot(residual, residual))
    if et == 0.0:
        return -float(cap_db)
    if er == 0.0:
        return float(cap_db)
    return float(np.clip(10.0 * np.log10(et / er), -cap_db, cap_db))


def spectral_mae(est_spec, ref_spec):
    """Mean absolute error between spectrogram magnitudes, averaged over all
    time-frequency cells."""
    a = np.asarray(est_spec.data if hasattr(est_spec, "data") else est_spec)
    b = np.asarray(ref_spec.data if hasattr(ref_spec, "data") else ref_spec)
    if a.shape != b.shape:
        raise ConfigError(f"spectrogram shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(np.abs(a) - np.abs(b))))


def loss1(est, ref, est_spec, ref_spec, cfg=None):
    """-si_sdr(est, ref) + mae_weight * spectral magnitude MAE."""
    cfg = cfg or LossConfig()
    return -si_sdr(est, ref, cfg.si_sdr_cap_db) + cfg.mae_weight * spectral_mae(
        est_spec, ref_spec
    )


def _pearson(a, b):
    """Absolute zero-lag Pearson correlation of mean-removed signals.
    Either signal being constant (zero after mean removal) gives 0."""
    a = a - np.mean(a)
    b = b - np.mean(b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return abs(float(np.dot(a, b))) / (na * nb)


def corr_loss(est, target, playback):
    """[1 - corr(est, target)] + corr(est - target, playback), in [0, 2].

    The first term rewards similarity to the target; the second penalizes
    any leftover playback in the residual.
    """
    est = _as_wave(est, "est")
    target = _as_wave(target, "target")
    playback = _as_wave(playback, "playback")
    if not (len(est) == len(target) == len(playback)):
        raise ConfigError("corr_loss signals must share one length")
    if float(np.dot(target, target)) == 0.0:
        raise DegenerateInputError("corr_loss target has zero energy")
    if float(np.dot(playback, playback)) == 0.0:
        raise DegenerateInputError("corr_loss playback has zero energy")
    return (1.0 - _pearson(est, target)) + _pearson(est - target, playback)


def loss2(est, ref, est_spec, ref_spec, playback, cfg=None):
    """loss1 + corr_weight * corr_loss. corr_weight = 0 skips the
    correlation term entirely (degenerate playback allowed in that case)."""
    cfg = cfg or LossConfig()
    base = loss1(est, ref, est_spec, ref_spec, cfg)
    if cfg.corr_weight == 0.0:
        return base
    return base + cfg.corr_weight * corr_loss(est, ref, playback)


def _component(components, name):
    if isinstance(components, dict):
        try:
            value = components[name]
        except KeyError:
            raise ConfigError(f"scene components are missing {name!r}") from None
    else:
        value = getattr(components, name, None)
        if value is None:
            raise ConfigError(f"scene components are missing {name!r}")
    return np.asarray(value, dtype=np.float64)


def select_playback(components, selector):
    """Resolve a playback_selector name against scene components (a dict or
    object carrying d21, d21_s, d11, d11_s waveforms)."""
    if selector not in PLAYBACK_SELECTORS:
        raise ConfigError(
            f"playback_selector must be one of {PLAYBACK_SELECTORS}, got {selector!r}"
        )
    if selector == "d21":
        return _component(components, "d21")
    if selector == "d21_s":
        return _component(components, "d21_s")
    if selector == "d21+d11":
        return _component(components, "d21") + _component(components, "d11")
    return _component(components, "d21_s") + _component(components, "d11_s")
