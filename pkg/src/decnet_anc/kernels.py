"""Backend selection for the hot sample loops.

The compiled Cython module is used when it imports; otherwise the numpy
fallback. Set ``DECNET_ANC_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

_forced = os.environ.get("DECNET_ANC_BACKEND", "").strip().lower()

_compiled = None
if _forced != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _forced == "cython":
            raise

_impl = _compiled if _compiled is not None else _fallback
BACKEND = "cython" if _compiled is not None else "python"

fir_filter = _impl.fir_filter
fxlms_loop = _impl.fxlms_loop
inverse_lms_loop = _impl.inverse_lms_loop
decnet_lms_loop = _impl.decnet_lms_loop


def available_backends():
    out = {"python": _fallback}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
