"""All-MLP image classifier scaled with two-axis sparse mixture-of-experts.

The numeric substrate is a minimal float64 tensor core with reverse-mode
gradient accumulation; hot kernels run through a compiled extension when
available (see :mod:`sparse_mlp.backend`).
"""

from . import backend

__version__ = "0.1.0"


def backend_name() -> str:
    """Which kernel set is active: 'compiled' or 'pure'."""
    return backend.name()
