"""Pure-numpy fallbacks for the compiled kernels.

Same contracts as ``_native``; used when the extension is not built or when
HOWLSIM_PURE=1. The NLMS recursion is inherently sample-sequential, so this
version pays per-sample numpy call overhead that the compiled core avoids.
"""

import numpy as np

BACKEND = "numpy"


def nlms_run(w, hist, pos, mic, ref, mu, delta, out):
    """Run the normalized-LMS recursion over one frame.

    w       : (L,) float64 filter taps, updated in place
    hist    : (L,) float64 reference delay line (ring buffer), updated in place
    pos     : int, ring write index; the returned value is the new index
    mic     : (n,) microphone samples
    ref     : (n,) reference samples
    mu, delta : step size and regularizer
    out     : (n,) float64, receives mic - filter*ref

    hist[pos] always holds the most recent reference sample; older samples
    sit at increasing (pos+k) mod L.
    """
    L = w.shape[0]
    for i in range(len(mic)):
        pos = (pos - 1) % L
        hist[pos] = ref[i]
        head = hist[pos:]
        tail = hist[:pos]
        k = L - pos
        y = np.dot(w[:k], head) + np.dot(w[k:], tail)
        power = np.dot(head, head) + np.dot(tail, tail)
        e = mic[i] - y
        g = mu * e / (power + delta)
        w[:k] += g * head
        w[k:] += g * tail
        out[i] = e
    return pos
