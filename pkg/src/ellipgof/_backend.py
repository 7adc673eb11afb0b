"""Select the compiled kernel when it is importable.

Set ``ELLIPGOF_BACKEND=numpy`` to force the pure-Python path.
"""

import os

from . import _kernels_py

BACKEND = "numpy"
evaluate_basis = _kernels_py.evaluate_basis

if os.environ.get("ELLIPGOF_BACKEND", "").lower() != "numpy":
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        evaluate_basis = _kernels.evaluate_basis
        BACKEND = "cython"
