"""Synthetic power grids, probabilistic dynamic stability, and topology-based prediction."""

__version__ = "0.1.0"

from .topology import (
    FEATURE_COLUMNS,
    FeatureMatrix,
    Grid,
    GridError,
    GrowthParams,
    assign_power,
    generate_growth_grid,
    import_grid,
    network_measures,
)
from .dynamics import (
    IntegratorConfig,
    MaxStepsExceeded,
    NoFixedPoint,
    NonFiniteState,
    State,
    SwingParams,
    classify_convergence,
    find_fixed_point,
    integrate,
    swing_rhs,
)
from .snbs import PerturbationBox, SnbsEstimate, bernoulli_se, estimate_snbs
from .dataset import (
    DatasetError,
    Histogram,
    StabilityDataset,
    build_dataset,
    load_dataset,
    save_dataset,
    snbs_histogram,
    split_dataset,
)
from .features import (
    DesignMatrices,
    FeaturePipelineConfig,
    build_design_matrix,
    transform_foreign,
)

__all__ = [
    "FEATURE_COLUMNS",
    "FeatureMatrix",
    "Grid",
    "GridError",
    "GrowthParams",
    "assign_power",
    "generate_growth_grid",
    "import_grid",
    "network_measures",
    "IntegratorConfig",
    "MaxStepsExceeded",
    "NoFixedPoint",
    "NonFiniteState",
    "State",
    "SwingParams",
    "classify_convergence",
    "find_fixed_point",
    "integrate",
    "swing_rhs",
    "PerturbationBox",
    "SnbsEstimate",
    "bernoulli_se",
    "estimate_snbs",
    "DatasetError",
    "Histogram",
    "StabilityDataset",
    "build_dataset",
    "load_dataset",
    "save_dataset",
    "snbs_histogram",
    "split_dataset",
    "DesignMatrices",
    "FeaturePipelineConfig",
    "build_design_matrix",
    "transform_foreign",
    "__version__",
]
