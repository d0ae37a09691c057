"""Kernel backend selection.

The compiled Cython kernel is preferred; set ``RTCHUNK_PURE_PYTHON=1`` to
force the numpy fallback (used in tests and as an escape hatch on platforms
where the extension fails to build).
"""

import os

from ._numpy_impl import ACT_IDENTITY, ACT_TANH, NumpyMlp

BACKEND = "numpy"
Mlp = NumpyMlp

if os.environ.get("RTCHUNK_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from ._fastmlp import FastMlp

        Mlp = FastMlp
        BACKEND = "cython"
    except ImportError:
        pass

__all__ = ["ACT_IDENTITY", "ACT_TANH", "BACKEND", "Mlp", "NumpyMlp"]
