"""Distribution and relation adaptive spatio-temporal forecasting.

Self-contained float64 stack: an autodiff tensor engine, the forecasting
network (adaptive normalization, dynamic/static relation fusion, a twin
variational stochastic learner), training with Adam, shift diagnostics,
a synthetic data generator, and a CLI. Hot kernels run through an optional
compiled extension (see dran.kernels).
"""

from .kernels import HAVE_EXT, backend_name
from .tensor import Tensor

__all__ = ["Tensor", "HAVE_EXT", "backend_name"]
__version__ = "0.1.0"
