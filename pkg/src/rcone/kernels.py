"""Scoring-kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``RCONE_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

MODE_ANSWER = _kernels_py.MODE_ANSWER
MODE_CANDIDATE = _kernels_py.MODE_CANDIDATE

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("RCONE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

cone_distance_matrix = _impl.cone_distance_matrix
arc_overlap = _impl.arc_overlap
distance_terms = _kernels_py.distance_terms
