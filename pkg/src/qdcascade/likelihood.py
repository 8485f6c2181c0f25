"""Backend selection for the Poisson likelihood kernel.

The compiled Cython kernel is used when the extension was built; otherwise
the NumPy implementation is used. Both share one signature, see
:func:`qdcascade._likelihood_py.nll_grad`.
"""

from . import _likelihood_py
from ._likelihood_py import pack, unpack  # noqa: F401

try:
    from ._likelihood_ext import nll_grad as _compiled_nll_grad
except ImportError:  # extension not built
    _compiled_nll_grad = None

BACKENDS = {"python": _likelihood_py.nll_grad}
if _compiled_nll_grad is not None:
    BACKENDS["compiled"] = _compiled_nll_grad

_active = "compiled" if "compiled" in BACKENDS else "python"


def available_backends():
    return tuple(BACKENDS)


def get_backend():
    return _active


def set_backend(name):
    """Switch the kernel used by :func:`nll_grad`; returns the previous name."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    previous, _active = _active, name
    return previous


def nll_grad(x, n, nset, b, psi_re, psi_im, grad):
    return BACKENDS[_active](x, n, nset, b, psi_re, psi_im, grad)
