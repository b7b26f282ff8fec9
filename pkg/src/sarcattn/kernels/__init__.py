"""Kernel backend selection.

The compiled extension (`_ckernels`, Cython) is preferred when it imported
cleanly; otherwise the numpy fallback is used. Override with
SARCATTN_KERNELS=python|cython|auto (checked once, at import).
"""

import os

from . import pykernels

_choice = os.environ.get("SARCATTN_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "python"):
    raise RuntimeError(
        f"SARCATTN_KERNELS must be auto, cython or python, got {_choice!r}")

_impl = None
if _choice in ("auto", "cython"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "cython":
            raise ImportError(
                "SARCATTN_KERNELS=cython but the compiled kernels are not "
                "available; rebuild with `pip install -e . --no-build-isolation`")
if _impl is None:
    _impl = pykernels

BACKEND = _impl.BACKEND
masked_softmax_fwd = _impl.masked_softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gru_seq_fwd = _impl.gru_seq_fwd
gru_seq_bwd = _impl.gru_seq_bwd
