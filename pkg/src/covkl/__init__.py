"""Frobenius-oracle and Kullback-Leibler covariance cleaning for Gaussian and Student's t data."""

from .divergence import (
    KlEstimate,
    QfMoments,
    kl_gauss_normalized,
    kl_gaussian,
    kl_h,
    kl_oracle_asym,
    kl_t_asym_normalized,
    kl_t_largen,
    kl_t_mc,
    kl_t_quadrature2,
    logpdf_t,
    qf_moments,
    ratio_variance,
)
from .linalg import (
    OrthonormalBasis,
    PopulationModel,
    Spectrum,
    SymmetricMatrix,
    eigendecompose,
    logdet,
    rie_build,
    trace_product,
    trace_quad,
)
from .optimize import (
    OptimizerOptions,
    OptimResult,
    kl_gaussian_gradient,
    minimize_kl_gaussian,
    minimize_kl_t,
    oracle_frobenius,
)
from .sampling import RngStream, SampleBlock, gen_population, sample_covariance, sample_mvn, sample_mvt

__version__ = "0.1.0"
