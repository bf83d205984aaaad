"""Deterministic speech-shaped signal synthesis.

Lets the simulator run end to end without any speech corpus: tilted noise
through two randomly placed formant resonators, gated by a slow syllabic
envelope. Not a vocoder — just enough spectral and temporal structure to
exercise echo, feedback, and suppression the way speech does.
"""

import numpy as np
from scipy.signal import lfilter

from .wavio import SAMPLE_RATE


def synth_speech(rng, n, fs=SAMPLE_RATE):
    """Speech-shaped test signal with peak 0.5, deterministic given rng state."""
    white = rng.standard_normal(n)
    # long-term spectral tilt
    tilted = lfilter([1.0], [1.0, -0.95], white)
    out = np.zeros(n)
    for fc, bw in ((rng.uniform(400.0, 700.0), 120.0), (rng.uniform(1200.0, 1900.0), 220.0)):
        r = np.exp(-np.pi * bw / fs)
        theta = 2.0 * np.pi * fc / fs
        out += lfilter([1.0], [1.0, -2.0 * r * np.cos(theta), r * r], tilted)
    # 4 Hz syllabic gating
    n_knots = max(int(n / fs * 4.0), 2) + 1
    knots = rng.uniform(0.05, 1.0, n_knots) ** 2
    env = np.interp(np.arange(n), np.linspace(0, n - 1, n_knots), knots)
    out *= env
    peak = np.max(np.abs(out))
    return out * (0.5 / peak) if peak > 0 else out
