"""Hot kernels with a compiled backend and a pure-Python fallback.

The Cython extension ``_core`` is used when importable; set the environment
variable ``SLICESORT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("SLICESORT_PURE_PYTHON"):
    try:
        from . import _core as _impl  # noqa: F811

        BACKEND = "compiled"
    except ImportError:
        pass

pairwise_hinge = _impl.pairwise_hinge
label_components = _impl.label_components
points_in_halfspaces = _impl.points_in_halfspaces
glass_swaps = _impl.glass_swaps

__all__ = ["BACKEND", "pairwise_hinge", "label_components", "points_in_halfspaces", "glass_swaps"]
