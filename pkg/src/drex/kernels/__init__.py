"""Per-interaction forward/backward kernels.

The compiled ``_fast`` extension is used when it was built; otherwise the
numpy implementation in ``_reference`` is used. Set ``DREX_KERNEL=python`` to
force the fallback.
"""

import os

from ._reference import Kernel as PythonKernel
from .layout import KERNEL_PARAMS

try:
    from ._fast import Kernel as CythonKernel
except ImportError:  # extension not built
    CythonKernel = None

if os.environ.get("DREX_KERNEL", "").lower() == "python" or CythonKernel is None:
    Kernel = PythonKernel
else:
    Kernel = CythonKernel

BACKEND = "cython" if Kernel is CythonKernel else "python"


def get_kernel(backend: str | None = None):
    if backend in (None, "auto"):
        return Kernel
    if backend == "python":
        return PythonKernel
    if backend == "cython":
        if CythonKernel is None:
            raise ImportError("the compiled kernel is not built; run `pip install -e .` with Cython available")
        return CythonKernel
    raise ValueError(f"unknown kernel backend {backend!r}")


__all__ = ["BACKEND", "CythonKernel", "KERNEL_PARAMS", "Kernel", "PythonKernel", "get_kernel"]
