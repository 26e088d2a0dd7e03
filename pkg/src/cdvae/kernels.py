"""Hot-loop kernels: compiled extension when available, numpy fallback otherwise.

Set ``CDVAE_PURE_PYTHON=1`` to force the fallback. Both backends expose
``ObjectiveKernel`` and ``adam_update`` with identical semantics.
"""

from __future__ import annotations

import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("CDVAE_PURE_PYTHON", "") in ("", "0"):
    _impl = compiled_backend
    BACKEND = "compiled"
else:
    _impl = python_backend
    BACKEND = "python"

ObjectiveKernel = _impl.ObjectiveKernel
adam_update = _impl.adam_update


def get(name: str | None = None):
    """Backend module by name (``"compiled"``/``"python"``); ``None`` means the active one."""
    if name is None:
        return _impl
    if name == "python":
        return python_backend
    if name == "compiled":
        if compiled_backend is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")
