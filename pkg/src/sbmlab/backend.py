"""Select the hot kernels: compiled extensions if importable, else numpy.

Set ``SBMLAB_PURE_PYTHON=1`` to force the numpy fallbacks.
"""
from __future__ import annotations

import os

from . import _field_py, _spde_py

BACKEND = "python"
_integrate = _spde_py.integrate
_pivoted_se = _field_py.pivoted_se

if not os.environ.get("SBMLAB_PURE_PYTHON"):
    try:
        from . import _field_native, _spde_native
    except ImportError:
        pass
    else:
        BACKEND = "native"
        _integrate = _spde_native.integrate
        _pivoted_se = _field_native.pivoted_se


def _pick(name, native_attr, module_py, attr):
    if name is None:
        return None
    if name == "python":
        return getattr(module_py, attr)
    if name == "native":
        import importlib

        return getattr(importlib.import_module(f"sbmlab.{native_attr}"), attr)
    raise ValueError(f"unknown backend {name!r}")


def get_integrator(name: str | None = None):
    """SPDE stepping loop for ``name`` ('native', 'python' or None for the default)."""
    return _pick(name, "_spde_native", _spde_py, "integrate") or _integrate


def get_pivoted_se(name: str | None = None):
    """Squared-exponential pivoted Cholesky for ``name``."""
    return _pick(name, "_field_native", _field_py, "pivoted_se") or _pivoted_se


def native_available() -> bool:
    try:
        from . import _field_native, _spde_native  # noqa: F401
    except ImportError:
        return False
    return True
