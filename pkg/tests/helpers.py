"""Shared signal builders for the test suite."""

import numpy as np

from howlsim.synth import synth_speech  # noqa: F401  (shared with the package)


def tone(freq, n, fs=16000, amplitude=1.0):
    return amplitude * np.sin(2.0 * np.pi * freq * np.arange(n) / fs)


def howling_profile(y, fs=16000):
    """Classify a closed-loop output: did it hit the +-1.0 rail, and did the
    100 ms window energies grow monotonically from onset to the rail window.

    Onset is the start of the longest non-decreasing energy run ending at the
    first railed window; the run must span at least 3 windows and grow by at
    least 20x to count as howling growth."""
    w = int(0.1 * fs)
    m = len(y) // w
    seg = np.asarray(y[: m * w]).reshape(m, w)
    energies = np.mean(seg * seg, axis=1)
    peaks = np.max(np.abs(seg), axis=1)
    railed = np.nonzero(peaks >= 0.99)[0]
    if len(railed) == 0:
        return False, False
    rail = int(railed[0])
    onset = rail
    while onset > 0 and energies[onset] >= energies[onset - 1]:
        onset -= 1
    grew = (
        rail - onset >= 3
        and bool(np.all(np.diff(energies[onset : rail + 1]) >= 0))
        and energies[rail] > 20.0 * max(energies[onset], 1e-300)
    )
    return True, grew


def harmonic_distortion(y, fundamental_bin, n_harmonics=8):
    """Ratio of harmonic magnitude (orders 2..n+1) to the fundamental, from the FFT."""
    spec = np.abs(np.fft.rfft(y))
    fund = spec[fundamental_bin]
    harm = [
        spec[k * fundamental_bin]
        for k in range(2, n_harmonics + 2)
        if k * fundamental_bin < len(spec)
    ]
    return float(np.sqrt(np.sum(np.square(harm))) / fund)
