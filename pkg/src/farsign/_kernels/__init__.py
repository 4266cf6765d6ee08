"""Hot numerical kernels behind a two-implementation interface.

``ops`` is either the compiled extension (built from _core.pyx) or the
pure-numpy module _ops_py.  Both implement the same functions with the
same random-stream consumption order, so a run is reproducible across
backends up to floating-point reassociation in objective values.  Set
FARSIGN_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import os

KERNEL_QUAD_DIAG = 1
KERNEL_SEPARABLE = 2

if os.environ.get("FARSIGN_PURE_PYTHON", "") not in ("", "0"):
    from . import _ops_py as ops

    BACKEND = "python"
else:
    try:
        from . import _core as ops  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _ops_py as ops

        BACKEND = "python"

__all__ = ["ops", "BACKEND", "KERNEL_QUAD_DIAG", "KERNEL_SEPARABLE"]
