"""Backend selection for the reference-solver time march.

The compiled extension is used when importable.  Setting the environment
variable ``JKOFLOW_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

march_python = _kernels_py.march
march_compiled = _compiled.march if _compiled is not None else None

if march_compiled is not None and os.environ.get("JKOFLOW_PURE_PYTHON") != "1":
    march = march_compiled
    BACKEND = "compiled"
else:
    march = march_python
    BACKEND = "python"

LINEAR, LOGISTIC, POWER_EPS, POWER = (_kernels_py.LINEAR, _kernels_py.LOGISTIC,
                                      _kernels_py.POWER_EPS, _kernels_py.POWER)
