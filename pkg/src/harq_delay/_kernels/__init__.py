"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when importable. Set ``HARQ_DELAY_PURE_PYTHON=1``
to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HARQ_DELAY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

OK, INFEASIBLE, UNSTABLE = _pykernels.OK, _pykernels.INFEASIBLE, _pykernels.UNSTABLE

evaluate = _impl.evaluate
pgd = _impl.pgd
pgd_batch = _impl.pgd_batch
simulate = _impl.simulate


def backend(name):
    """Return the kernel module for ``name`` ('python' or 'cython')."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
