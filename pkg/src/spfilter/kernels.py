"""Backend selection for the numerical kernels.

The compiled Cython extension is used when it is importable. Setting
``SPFILTER_PURE_PYTHON=1`` forces the numpy fallback. ``beta_logpdf`` and
``mlp_forward`` stay on numpy either way: its vectorized log and a single
BLAS call per layer beat the compiled loops at our sizes (see
benchmarks/bench_kernels.py).
"""

import os

from . import _pykernels

python = _pykernels

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("SPFILTER_PURE_PYTHON", "") in ("", "0"):
    backend = compiled
else:
    backend = _pykernels

BACKEND = backend.NAME

beta_logpdf = _pykernels.beta_logpdf
gauss_logpdf = backend.gauss_logpdf
responsibilities = backend.responsibilities
weighted_moments = backend.weighted_moments
midrank_auroc = backend.midrank_auroc
mlp_forward = _pykernels.mlp_forward
mlp_backward = backend.mlp_backward
sgd_update = backend.sgd_update
