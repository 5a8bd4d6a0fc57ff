"""Object extraction: mixture-density kernels and SVRF labelling."""

from .kernels import (
    check_kernel, combine_kernels, kernel_kmeans, mdk, mdk_matrix, mdk_modified,
    mdk_modified_matrix, tune_mu_ga,
)
from .mixture import MixtureEnsemble, fit_mixture_ensemble
from .svrf import (
    ClusterSeeds, LabelField, SVMUnary, TableUnary, derive_seeds, energy, icm, pair_weights,
    pixel_features, region_grow, segment_objects, svrf_segment, train_unary,
)

__all__ = [
    "check_kernel", "combine_kernels", "kernel_kmeans", "mdk", "mdk_matrix", "mdk_modified",
    "mdk_modified_matrix", "tune_mu_ga", "MixtureEnsemble", "fit_mixture_ensemble",
    "ClusterSeeds", "LabelField", "SVMUnary", "TableUnary", "derive_seeds", "energy", "icm",
    "pair_weights", "pixel_features", "region_grow", "segment_objects", "svrf_segment", "train_unary",
]
