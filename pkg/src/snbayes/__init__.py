"""Bayesian dark-energy model fits to Type Ia supernova distance moduli.

Pipeline: load a catalog and systematic covariance, whiten the Gaussian
likelihood through the Cholesky factor of the total covariance, sample the
posterior of LCDM / wCDM / CPL with a native NUTS implementation, and
compare models by WAIC and bridge-sampling Bayes factors.
"""

from .cosmology import (
    CosmoParams,
    ModelKind,
    RedshiftGrid,
    cpl_w_of_z,
    distance_modulus,
    hubble_rate,
    luminosity_distance,
)
from .dataset import (
    SupernovaCatalog,
    TotalCovariance,
    assemble_total_covariance,
    load_catalog,
    load_covariance,
)
from .inference import PosteriorSpec, PriorSpec, sample_prior
from .sampler import ChainSet, MassMatrix, SamplerConfig, run_chains
from .whitening import CholeskyFactor, cholesky_factorize, whiten, unwhiten

__version__ = "0.1.0"

__all__ = [
    "ChainSet",
    "CholeskyFactor",
    "CosmoParams",
    "MassMatrix",
    "ModelKind",
    "PosteriorSpec",
    "PriorSpec",
    "RedshiftGrid",
    "SamplerConfig",
    "SupernovaCatalog",
    "TotalCovariance",
    "assemble_total_covariance",
    "cholesky_factorize",
    "cpl_w_of_z",
    "distance_modulus",
    "hubble_rate",
    "load_catalog",
    "load_covariance",
    "luminosity_distance",
    "run_chains",
    "sample_prior",
    "unwhiten",
    "whiten",
    "__version__",
]
