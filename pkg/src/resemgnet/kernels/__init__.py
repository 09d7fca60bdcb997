"""Hot-kernel backend selection.

Two interchangeable implementations of the conv / pool / LSTM inner loops
exist: a compiled Cython extension (``_fast``) and a pure-numpy fallback
(``numpy_backend``). The compiled one is preferred when importable.

Set ``RESEMGNET_BACKEND=numpy`` or ``RESEMGNET_BACKEND=cython`` to force a
choice; forcing ``cython`` when the extension is missing raises at import.
Both backends implement identical storage-rounding semantics (float32 or
float64 storage, float64 accumulation), so results agree to rounding noise;
``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

_choice = os.environ.get("RESEMGNET_BACKEND", "auto").lower()
if _choice not in ("auto", "numpy", "cython"):
    raise ImportError(
        f"RESEMGNET_BACKEND must be 'numpy', 'cython' or unset, got {_choice!r}"
    )

if _choice == "numpy":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _fast as _impl

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        from . import numpy_backend as _impl

        BACKEND = "numpy"

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
lstm_recurrence_forward = _impl.lstm_recurrence_forward
lstm_recurrence_backward = _impl.lstm_recurrence_backward
