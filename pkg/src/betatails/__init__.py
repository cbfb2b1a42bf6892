"""Small-deviation experiments for beta-Hermite and beta-Laguerre extremal eigenvalues."""
import numba as _numba

# the bundled TBB is often too old for numba and only produces a warning;
# results never depend on the threading layer
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
