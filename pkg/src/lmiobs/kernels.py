"""Expression-program interpreter backend selection.

Prefers the compiled extension; falls back to the pure numpy
implementation when the extension is unavailable or LMIOBS_PURE=1 is
set. Both backends expose the same four entry points and status codes,
and the test suite checks them against each other.
"""

import os

if os.environ.get("LMIOBS_PURE") == "1":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
STATUS_REASONS = _impl.STATUS_REASONS

eval_single = _impl.eval_single
jac_single = _impl.jac_single
eval_batch = _impl.eval_batch
jac_batch = _impl.jac_batch
