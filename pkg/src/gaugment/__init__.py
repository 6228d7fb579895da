"""Graph-structured augmentation policies for speech features, and an
evolutionary search over them."""

from __future__ import annotations

from .augment_ops import (
    AugmentConfig,
    EffectLog,
    FeatureBatch,
    FeatureMatrix,
    apply_augmentation,
    apply_path,
    apply_policy,
    map_magnitude,
)
from .evolution import (
    SearchConfig,
    SearchResult,
    Trial,
    random_policy_search,
    random_search_specaugment,
    run_search,
    search_space_lower_bound,
)
from .fitness import (
    ExternalCommand,
    FitnessRequest,
    FitnessValue,
    ProxyClassifier,
    SyntheticLandscape,
    make_evaluator,
)
from .io_formats import PolicyDocument, load_asset, read_policy, write_policy
from .policy_graph import (
    AUG_TYPES,
    AugSpec,
    EnsembleNode,
    PolicyGraph,
    count_paths,
    enumerate_paths,
    increment_magnitudes,
    mutate,
    path_code,
    random_policy,
    sample_path,
    sample_path_codes,
    scale_magnitudes,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "AUG_TYPES",
    "AugSpec",
    "AugmentConfig",
    "EffectLog",
    "EnsembleNode",
    "ExternalCommand",
    "FeatureBatch",
    "FeatureMatrix",
    "FitnessRequest",
    "FitnessValue",
    "PolicyDocument",
    "PolicyGraph",
    "ProxyClassifier",
    "SearchConfig",
    "SearchResult",
    "SyntheticLandscape",
    "Trial",
    "apply_augmentation",
    "apply_path",
    "apply_policy",
    "count_paths",
    "enumerate_paths",
    "increment_magnitudes",
    "load_asset",
    "make_evaluator",
    "map_magnitude",
    "mutate",
    "random_policy",
    "random_policy_search",
    "random_search_specaugment",
    "read_policy",
    "run_search",
    "path_code",
    "sample_path",
    "sample_path_codes",
    "scale_magnitudes",
    "search_space_lower_bound",
    "validate",
    "write_policy",
]
