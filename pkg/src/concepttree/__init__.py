"""Decompose a visual concept into a tree of learned token embeddings.

Given a handful of images of one concept, the package fits pairs of new
token embeddings against a frozen text-to-image model so that each pair
regenerates its parent, scores the results by cosine consistency of the
generated sets, and grows a tree whose nodes are reusable prompt tokens.
Trees persist to self-contained archives, and a REST service plus CLI
expose building, sampling and cross-tree token combination.
"""

from .backend import (
    BackendBatch,
    BackendError,
    BackendUnavailableError,
    DiffusionBackend,
    NoiseSchedule,
    TrainStepResult,
    noise_latent,
)
from .builder import (
    BuildEvent,
    BuilderError,
    SplitRecord,
    TreeBuilder,
    adopt_tree,
)
from .core import (
    BuildConfig,
    CandidatePair,
    ConceptNode,
    ConceptTree,
    ConceptTreeError,
    ConfigError,
    ConsistencyReport,
    ImageRef,
    ImageSet,
    ImageSource,
    NodeStatus,
    validate_tree,
)
from .dictionary import DictionaryError, TokenDictionary
from .mock import ConceptSpace, MockBackend
from .scoring import (
    ConsistencyMatrix,
    StopDecision,
    consistency,
    consistency_matrix,
    curate_training_set,
    evaluate_stop,
    measure_reconstruction,
    score_candidate,
    select_best_seed,
)
from .seeding import derive_seed
from .store import StoreError, list_trees, load_tree, save_tree, trees_equal
from .timesteps import TimestepDistribution, build_distribution, sample, sample_many
from .trainer import TrainJob, TrainerError, train_pair

__version__ = "0.1.0"

__all__ = [
    "BackendBatch",
    "BackendError",
    "BackendUnavailableError",
    "BuildConfig",
    "BuildEvent",
    "BuilderError",
    "CandidatePair",
    "ConceptNode",
    "ConceptSpace",
    "ConceptTree",
    "ConceptTreeError",
    "ConfigError",
    "ConsistencyMatrix",
    "ConsistencyReport",
    "DictionaryError",
    "DiffusionBackend",
    "ImageRef",
    "ImageSet",
    "ImageSource",
    "MockBackend",
    "NodeStatus",
    "NoiseSchedule",
    "SplitRecord",
    "StopDecision",
    "StoreError",
    "TimestepDistribution",
    "TokenDictionary",
    "TrainJob",
    "TrainStepResult",
    "TrainerError",
    "TreeBuilder",
    "adopt_tree",
    "build_distribution",
    "consistency",
    "consistency_matrix",
    "curate_training_set",
    "derive_seed",
    "evaluate_stop",
    "list_trees",
    "load_tree",
    "measure_reconstruction",
    "noise_latent",
    "sample",
    "sample_many",
    "save_tree",
    "score_candidate",
    "select_best_seed",
    "train_pair",
    "trees_equal",
    "validate_tree",
]
