"""Convolution kernel backends.

The active backend is chosen by the ``GANTRANSFER_BACKEND`` environment
variable (``numba`` by default, ``numpy`` for the pure-fallback path) and can
be overridden at runtime with :func:`set_backend`. Both backends implement
the same three operations; within one backend results are bit-reproducible,
across backends they agree to floating-point tolerance.
"""

from __future__ import annotations

import os

from ..errors import ConfigError

ENV_BACKEND = "GANTRANSFER_BACKEND"
BACKENDS = ("numba", "numpy")

_active_name: str | None = None
_active_module = None


def _load(name: str):
    if name == "numpy":
        from . import reference

        return reference
    if name == "numba":
        from . import jit

        return jit
    raise ConfigError(f"unknown kernel backend {name!r}; choose from {BACKENDS}")


def set_backend(name: str) -> None:
    global _active_name, _active_module
    _active_module = _load(name)
    _active_name = name


def get_backend() -> str:
    if _active_name is None:
        set_backend(os.environ.get(ENV_BACKEND, "numba"))
    return _active_name


def _module():
    if _active_module is None:
        get_backend()
    return _active_module


def conv2d_forward(x_padded, w, stride):
    return _module().conv2d_forward(x_padded, w, stride)


def conv2d_backward_input(dy, w, stride, hp, wp):
    return _module().conv2d_backward_input(dy, w, stride, hp, wp)


def conv2d_backward_kernel(dy, x_padded, kh, kw, stride):
    return _module().conv2d_backward_kernel(dy, x_padded, kh, kw, stride)
