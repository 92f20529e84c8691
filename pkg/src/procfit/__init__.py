"""procfit: rigid fitting of procedural geometric models to non-complete point clouds.

The library fits parametric model families (frame regions, holed quads,
spheres, simple buildings) to point clouds that may be incomplete,
over-complete, or both, by maximizing partial-similarity metrics with
Metropolis-Hastings sampling, coarse-to-fine early rejection, and
parallel tempering.
"""

from .geometry import (
    Point3,
    PointCloud,
    FrameRegion,
    HoledQuad,
    Sphere,
    SubModel,
    measure,
    eta_top,
    divide,
    rigid_place,
    sample_uniform,
)
from .spatial import NNIndex
from .metrics import (
    MetricConfig,
    SampledModel,
    SimilarityValue,
    ohd_points,
    shd,
    mm,
    smm,
    wmm,
    ohdqm,
    vd,
    ir,
    normalize_curve,
)
from .grammar import (
    ParamDescriptor,
    ParamVector,
    ModelFamily,
    get_family,
    active_params,
    instantiate,
    resync_params,
    log_prior,
)
from .engine import FitConfig, FitResult, log_likelihood, accept_prob, run_fit

__version__ = "0.1.0"

__all__ = [
    "Point3",
    "PointCloud",
    "FrameRegion",
    "HoledQuad",
    "Sphere",
    "SubModel",
    "measure",
    "eta_top",
    "divide",
    "rigid_place",
    "sample_uniform",
    "NNIndex",
    "MetricConfig",
    "SampledModel",
    "SimilarityValue",
    "ohd_points",
    "shd",
    "mm",
    "smm",
    "wmm",
    "ohdqm",
    "vd",
    "ir",
    "normalize_curve",
    "ParamDescriptor",
    "ParamVector",
    "ModelFamily",
    "get_family",
    "active_params",
    "instantiate",
    "resync_params",
    "log_prior",
    "FitConfig",
    "FitResult",
    "log_likelihood",
    "accept_prob",
    "run_fit",
]
