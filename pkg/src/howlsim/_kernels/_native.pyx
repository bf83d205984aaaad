# Compiled kernel core. Hot sample-sequential recursions live here; everything
# block- or FFT-shaped stays in numpy/scipy. Contracts mirror _numpy.py.

BACKEND = "native"


cpdef int nlms_run(double[::1] w, double[::1] hist, int pos,
                   double[::1] mic, double[::1] ref,
                   double mu, double delta, double[::1] out):
    """Normalized-LMS over one frame; see _numpy.nlms_run for the contract."""
    cdef Py_ssize_t L = w.shape[0]
    cdef Py_ssize_t n = mic.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double y, power, e, g
    for i in range(n):
        pos -= 1
        if pos < 0:
            pos += L
        hist[pos] = ref[i]
        y = 0.0
        power = 0.0
        k = L - pos
        for j in range(k):
            y += w[j] * hist[pos + j]
            power += hist[pos + j] * hist[pos + j]
        for j in range(pos):
            y += w[k + j] * hist[j]
            power += hist[j] * hist[j]
        e = mic[i] - y
        g = mu * e / (power + delta)
        for j in range(k):
            w[j] += g * hist[pos + j]
        for j in range(pos):
            w[k + j] += g * hist[j]
        out[i] = e
    return pos
