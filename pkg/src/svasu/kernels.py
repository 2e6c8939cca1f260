"""Backend selection for the hot kernels.

The compiled extension is used when it was built and importable; setting
``SVASU_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

if os.environ.get("SVASU_PURE_PYTHON", "0") not in ("", "0"):
    from ._fallback import multiplicative_step, window_scores

    BACKEND = "python"
else:
    try:
        from ._ckernels import multiplicative_step, window_scores

        BACKEND = "cython"
    except ImportError:
        from ._fallback import multiplicative_step, window_scores

        BACKEND = "python"

__all__ = ["BACKEND", "multiplicative_step", "window_scores"]
