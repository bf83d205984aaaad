"""Kernel backend selection.

Imports the compiled extension when available, otherwise the numpy fallback.
Set HOWLSIM_PURE=1 to force the fallback (useful for benchmarking and for
verifying the two backends agree).
"""

import os

if os.environ.get("HOWLSIM_PURE") == "1":
    from . import _numpy as impl
else:
    try:
        from . import _native as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _numpy as impl

BACKEND = impl.BACKEND
nlms_run = impl.nlms_run


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["numpy"]
    try:
        from . import _native  # noqa: F401
        names.insert(0, "native")
    except ImportError:
        pass
    return names
