"""Multilevel probabilistic clustering via composite transportation distance."""

from .barycenter import BarycenterConfig, fit_barycenter
from .data import (
    GeneratorConfig,
    GroupedDataset,
    generate_bars,
    generate_continuous,
    load_dataset,
    load_mixture,
    load_model,
    save_dataset,
    save_mixture,
    save_model,
)
from .expfam import FamilySpec
from .metrics import ami, ari, nmi
from .mixture import MixtureFitConfig, fit_mixture
from .multilevel import MctConfig, MctModel, assign_groups, fit_mct, mct_objective
from .ot import (
    Mixture,
    composite_distance,
    composite_transport,
    mixture_of_mixtures_distance,
    sinkhorn,
)

__all__ = [
    "BarycenterConfig",
    "FamilySpec",
    "GeneratorConfig",
    "GroupedDataset",
    "MctConfig",
    "MctModel",
    "Mixture",
    "MixtureFitConfig",
    "ami",
    "ari",
    "assign_groups",
    "composite_distance",
    "composite_transport",
    "fit_barycenter",
    "fit_mct",
    "fit_mixture",
    "generate_bars",
    "generate_continuous",
    "load_dataset",
    "load_mixture",
    "load_model",
    "mct_objective",
    "mixture_of_mixtures_distance",
    "nmi",
    "save_dataset",
    "save_mixture",
    "save_model",
    "sinkhorn",
]

__version__ = "0.1.0"
