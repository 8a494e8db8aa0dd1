"""Renewal-theoretic numerics for iterated perturbed random walks."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .dist import JointStepModel, MomentReport, discretize_cdf, laplace, moments, sample_pair  # noqa: E402
from .gridfn import GridFunction, convolution_power, stieltjes_convolve  # noqa: E402
from .renewal import RenewalTables, build_tables, check_bounds, gamma0  # noqa: E402
from .gamma import gamma_rate, mu  # noqa: E402

__all__ = [
    "GridFunction", "JointStepModel", "MomentReport", "RenewalTables",
    "build_tables", "check_bounds", "convolution_power", "discretize_cdf", "gamma0",
    "gamma_rate", "laplace", "moments", "mu", "sample_pair", "stieltjes_convolve",
]
