"""Backend selection for the coordinate-descent kernels.

The compiled extension is used when it imports; setting the environment
variable ``UNDERSMOOTH_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
import os

from . import _cd_py

if os.environ.get("UNDERSMOOTH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _cd_py
    BACKEND = "python"
else:
    try:
        from . import _cd_ext as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _cd_py
        BACKEND = "python"

cd_gram = _impl.cd_gram
cd_path_gram = _impl.cd_path_gram

__all__ = ["BACKEND", "cd_gram", "cd_path_gram"]
