"""Kernel backend selection.

The hot inner loops (stencil application, CG, polygon SDF rasterization,
bilinear gathers) exist twice: a Cython extension (``_compiled``) and a pure
numpy fallback (``_numpy``). The compiled backend is used when importable;
set PHASEPACK_KERNELS=python or =compiled to force one (``compiled`` raises
if the extension is missing). ``benchmarks/bench_backends.py`` compares them.
"""

import os

_requested = os.environ.get("PHASEPACK_KERNELS", "auto")

if _requested not in ("auto", "python", "compiled"):
    raise RuntimeError(f"PHASEPACK_KERNELS must be auto|python|compiled, got {_requested!r}")

if _requested == "python":
    from . import _numpy as _impl
    BACKEND = "python"
else:
    try:
        from . import _compiled as _impl
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import _numpy as _impl
        BACKEND = "python"

STENCIL_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]

stencil_apply = _impl.stencil_apply
cg_stencil = _impl.cg_stencil
polygon_sdf = _impl.polygon_sdf
bilinear_gather = _impl.bilinear_gather
