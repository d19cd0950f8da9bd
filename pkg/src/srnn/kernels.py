"""Backend selection for the recurrence kernels.

The compiled extension is used when it imports; ``SRNN_PURE_PYTHON=1`` forces
the NumPy implementation.
"""

import os

from . import _pykernels as python

try:
    if os.environ.get("SRNN_PURE_PYTHON", "").lower() in ("1", "true", "yes"):
        raise ImportError("pure python requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
rnn_forward = _impl.rnn_forward
rnn_backward = _impl.rnn_backward
