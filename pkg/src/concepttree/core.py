"""Shared value types for concept exploration trees.

Everything in this module is a plain data carrier: construction validates,
nothing trains, scores, or touches disk. The heavier machinery lives in the
sibling modules and only passes these objects around.

A tree decomposes one visual concept (the root image set) into a binary
hierarchy of sub-concepts. Each non-root node owns a placeholder token, the
learned embedding behind that token, a set of sample images generated from
the token, and the consistency scores recorded when the node was created.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .builder import SplitRecord
    from .dictionary import TokenDictionary

EMBED_DTYPE = np.float32
ROOT_ID = 0


class ConceptTreeError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigError(ConceptTreeError, ValueError):
    pass


def as_embedding(values, dim: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a finite 1-D float32 vector, copying the input.

    ``dim`` pins the expected length when the caller knows it.
    """
    vec = np.asarray(values, dtype=EMBED_DTYPE)
    if vec.ndim != 1:
        raise ConfigError(f"embedding must be 1-D, got shape {vec.shape}")
    if vec.size == 0:
        raise ConfigError("embedding must not be empty")
    if not np.all(np.isfinite(vec)):
        raise ConfigError("embedding has non-finite entries")
    if dim is not None and vec.size != dim:
        raise ConfigError(f"embedding length {vec.size} != expected {dim}")
    return vec.copy()


class ImageSource(str, Enum):
    USER = "user"
    GENERATED = "generated"


class NodeStatus(str, Enum):
    ROOT = "root"
    ACTIVE = "active"
    LEAF_STOPPED = "leaf-stopped"
    LEAF_INCOHERENT = "leaf-incoherent"


@dataclass(eq=False)
class ImageRef:
    """Handle to one image.

    ``payload`` is either an in-memory vector (mock backends represent an
    image by its concept-space vector), a path to an image file on disk, or
    raw encoded bytes. Generated images always record the prompt and seed
    that produced them; user-supplied images never carry either.
    """

    image_id: str
    payload: np.ndarray | Path | bytes | None
    source: ImageSource = ImageSource.USER
    seed: int | None = None
    prompt: str | None = None

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ConfigError("image_id must be non-empty")
        if self.source is ImageSource.GENERATED:
            if self.seed is None or self.prompt is None:
                raise ConfigError(
                    f"generated image {self.image_id!r} needs seed and prompt"
                )
        elif self.seed is not None or self.prompt is not None:
            raise ConfigError(
                f"user image {self.image_id!r} must not carry seed or prompt"
            )


@dataclass(eq=False)
class ImageSet:
    """Ordered collection of images, optionally with cached embeddings.

    ``cached_embeddings`` holds one row per image, in image order. Scoring
    fills the cache on first use so repeated scoring passes never re-embed.
    """

    images: tuple[ImageRef, ...]
    cached_embeddings: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.images = tuple(self.images)
        ids = [im.image_id for im in self.images]
        if len(set(ids)) != len(ids):
            raise ConfigError("image ids within a set must be unique")
        if self.cached_embeddings is not None:
            mat = np.asarray(self.cached_embeddings)
            if mat.ndim != 2 or mat.shape[0] != len(self.images):
                raise ConfigError(
                    "cached embeddings must have one row per image"
                )
            self.cached_embeddings = mat

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self) -> Iterator[ImageRef]:
        return iter(self.images)

    def ids(self) -> tuple[str, ...]:
        return tuple(im.image_id for im in self.images)

    def subset(self, indices: Sequence[int]) -> "ImageSet":
        images = tuple(self.images[i] for i in indices)
        cache = None
        if self.cached_embeddings is not None:
            cache = self.cached_embeddings[list(indices)].copy()
        return ImageSet(images, cache)


@dataclass(eq=False)
class ConceptNode:
    """One node of a concept tree.

    The root carries the user images and neither token nor embedding. Every
    other node was produced by a split and records the consistency scores
    measured when it was attached: ``self_consistency`` over its own sample
    set and ``sibling_cross_consistency`` against its sibling's set.
    """

    node_id: int
    samples: ImageSet
    token: str | None = None
    embedding: np.ndarray | None = None
    parent_id: int | None = None
    child_ids: tuple[int, ...] = ()
    self_consistency: float | None = None
    sibling_cross_consistency: float | None = None
    status: NodeStatus = NodeStatus.ACTIVE

    def __post_init__(self) -> None:
        if self.node_id < 0:
            raise ConfigError("node ids are non-negative integers")
        self.child_ids = tuple(self.child_ids)
        if self.embedding is not None:
            self.embedding = as_embedding(self.embedding)

    @property
    def is_root(self) -> bool:
        return self.node_id == ROOT_ID

    @property
    def is_leaf(self) -> bool:
        return not self.child_ids

    def splittable(self) -> bool:
        """A node can be split while it is an unsplit root or active leaf."""
        if not self.is_leaf:
            return False
        return self.status in (NodeStatus.ROOT, NodeStatus.ACTIVE)


@dataclass(frozen=True)
class BuildConfig:
    """Knobs for building a tree.

    Defaults follow the reference recipe: skewed timestep sampling with
    ``alpha=0.5``, four candidate seeds trained for 200 steps each, the
    winner finalized to 1500 total steps, 40-image scoring sets curated down
    to 10 training images, and both stopping thresholds at 0.70.
    """

    alpha: float = 0.5
    k_seeds: tuple[int, ...] = (0, 1000, 1234, 111)
    candidate_steps: int = 200
    final_steps: int = 1500
    score_set_size: int = 40
    train_set_size: int = 10
    batch_size: int = 2
    learning_rate: float = 0.004
    max_depth: int = 2
    self_coherency_threshold: float = 0.70
    sibling_distinctness_threshold: float = 0.70
    init_word: str = "object"
    init_strategy: str = "word"
    train_template: str = "A photograph of {left} {right}"
    children_per_node: int = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.k_seeds:
            raise ConfigError("k_seeds must not be empty")
        if len(set(self.k_seeds)) != len(self.k_seeds):
            raise ConfigError("k_seeds must be distinct")
        if any(s < 0 for s in self.k_seeds):
            raise ConfigError("seeds must be non-negative")
        if self.candidate_steps < 1 or self.final_steps < 1:
            raise ConfigError("step counts must be positive")
        if self.final_steps < self.candidate_steps:
            raise ConfigError("final_steps must be >= candidate_steps")
        if self.train_set_size < 2:
            raise ConfigError("train_set_size must be at least 2")
        if self.score_set_size < 2:
            raise ConfigError("score_set_size must be at least 2")
        if self.train_set_size > self.score_set_size:
            raise ConfigError("train_set_size cannot exceed score_set_size")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        for name in ("self_coherency_threshold", "sibling_distinctness_threshold"):
            value = getattr(self, name)
            if not -1.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [-1, 1], got {value}")
        if not self.init_word:
            raise ConfigError("init_word must be non-empty")
        if self.init_strategy not in ("word", "exemplar"):
            raise ConfigError(
                "init_strategy must be 'word' (every sibling starts at the "
                "init word) or 'exemplar' (siblings start at spread-out "
                "training latents; needs latent and embedding spaces to "
                "coincide, as in the mock backend)"
            )
        if self.children_per_node not in (2, 3):
            raise ConfigError("children_per_node must be 2 (default) or 3")
        object.__setattr__(self, "k_seeds", tuple(self.k_seeds))


def _selection_objective(self_left: float, self_right: float, cross: float) -> float:
    return self_left + self_right + (min(self_left, self_right) - cross)


@dataclass(frozen=True)
class ConsistencyReport:
    """Scores for one candidate pair of siblings.

    ``objective`` is the seed-selection value: the two self-consistencies
    plus the margin between the weaker self-consistency and the sibling
    cross-consistency. It is stored rather than recomputed so that archived
    reports stay bit-stable, and construction checks the identity.
    """

    self_left: float
    self_right: float
    cross: float
    objective: float

    def __post_init__(self) -> None:
        for name in ("self_left", "self_right", "cross"):
            value = getattr(self, name)
            if not np.isfinite(value) or not -1.0 <= value <= 1.0 + 1e-12:
                raise ConfigError(f"{name} must be a cosine mean in [-1, 1]")
        expected = _selection_objective(self.self_left, self.self_right, self.cross)
        if self.objective != expected:
            raise ConfigError(
                f"objective {self.objective!r} does not match recomputation {expected!r}"
            )

    @classmethod
    def from_scores(cls, self_left: float, self_right: float, cross: float) -> "ConsistencyReport":
        return cls(
            self_left=float(self_left),
            self_right=float(self_right),
            cross=float(cross),
            objective=_selection_objective(float(self_left), float(self_right), float(cross)),
        )

    @property
    def min_self(self) -> float:
        return min(self.self_left, self.self_right)


@dataclass(eq=False)
class CandidatePair:
    """One trained candidate: a seed, its embeddings, sample sets, scores."""

    seed: int
    left_embedding: np.ndarray
    right_embedding: np.ndarray
    left_samples: ImageSet
    right_samples: ImageSet
    report: ConsistencyReport

    def __post_init__(self) -> None:
        self.left_embedding = as_embedding(self.left_embedding)
        self.right_embedding = as_embedding(self.right_embedding)


@dataclass(eq=False)
class ConceptTree:
    """A rooted binary decomposition of one concept.

    ``nodes`` maps dense integer ids to nodes; the root is always id 0 and
    children receive the next unused ids at split time, so ids grow in
    breadth-first creation order. ``dictionary`` holds the learned token
    embeddings, ``build_log`` the record of every split attempt.
    """

    tree_id: str
    nodes: dict[int, ConceptNode]
    dictionary: "TokenDictionary"
    config: BuildConfig
    build_log: list["SplitRecord"] = field(default_factory=list)
    vocabulary_checksum: str | None = None

    def __post_init__(self) -> None:
        if not self.tree_id or "/" in self.tree_id:
            raise ConfigError("tree_id must be a non-empty path-safe name")

    @property
    def root(self) -> ConceptNode:
        return self.nodes[ROOT_ID]

    @property
    def root_images(self) -> ImageSet:
        return self.root.samples

    def depth(self, node_id: int) -> int:
        depth = 0
        node = self.nodes[node_id]
        while node.parent_id is not None:
            node = self.nodes[node.parent_id]
            depth += 1
        return depth

    def next_child_ids(self, count: int = 2) -> tuple[int, ...]:
        start = max(self.nodes) + 1
        return tuple(range(start, start + count))

    def token_for(self, node_id: int) -> str:
        """Placeholder token a node of this tree uses, e.g. ``<t_v3>``."""
        return f"<{self.tree_id}_v{node_id}>"

    def active_leaves(self) -> list[ConceptNode]:
        return sorted(
            (n for n in self.nodes.values() if n.splittable()),
            key=lambda n: n.node_id,
        )


def validate_tree(tree: ConceptTree) -> list[str]:
    """Check structural invariants; returns violations instead of raising.

    Each violation names the offending node (or ``tree``) and the broken
    rule, so callers can log or surface all problems at once.
    """
    problems: list[str] = []
    arity = tree.config.children_per_node

    root = tree.nodes.get(ROOT_ID)
    if root is None:
        return ["tree: missing root node 0"]
    if root.status not in (
        NodeStatus.ROOT,
        NodeStatus.LEAF_STOPPED,
        NodeStatus.LEAF_INCOHERENT,
    ):
        problems.append(
            "node 0: root status must be 'root' (or a stopped state after "
            "a rejected split)"
        )
    if root.token is not None or root.embedding is not None:
        problems.append("node 0: root carries no token or embedding")
    if root.parent_id is not None:
        problems.append("node 0: root cannot have a parent")

    roots = [n.node_id for n in tree.nodes.values() if n.parent_id is None]
    if roots != [ROOT_ID]:
        problems.append(f"tree: expected the single root 0, found {sorted(roots)}")

    seen_tokens: dict[str, int] = {}
    for node_id, node in sorted(tree.nodes.items()):
        if node.node_id != node_id:
            problems.append(f"node {node_id}: key does not match node_id {node.node_id}")
        if node.child_ids and len(node.child_ids) != arity:
            problems.append(
                f"node {node_id}: has {len(node.child_ids)} children, expected 0 or {arity}"
            )
        for child_id in node.child_ids:
            child = tree.nodes.get(child_id)
            if child is None:
                problems.append(f"node {node_id}: missing child {child_id}")
            elif child.parent_id != node_id:
                problems.append(f"node {child_id}: parent link does not match {node_id}")
        if node.is_root:
            continue
        if node.parent_id is not None and node.parent_id not in tree.nodes:
            problems.append(f"node {node_id}: unknown parent {node.parent_id}")
        if node.token is None:
            problems.append(f"node {node_id}: non-root node needs a token")
        else:
            if node.token in seen_tokens:
                problems.append(
                    f"node {node_id}: token {node.token!r} also used by node {seen_tokens[node.token]}"
                )
            seen_tokens[node.token] = node_id
            if node.token not in tree.dictionary.injected:
                problems.append(f"node {node_id}: token {node.token!r} not in dictionary")
        if node.embedding is None:
            problems.append(f"node {node_id}: non-root node needs an embedding")
        elif node.embedding.size != tree.dictionary.embed_dim:
            problems.append(
                f"node {node_id}: embedding length {node.embedding.size} != "
                f"dictionary dim {tree.dictionary.embed_dim}"
            )
        if node.status is NodeStatus.ROOT:
            problems.append(f"node {node_id}: only node 0 may use status 'root'")

    # reachability: every node must hang off the root
    reached: set[int] = set()
    stack = [ROOT_ID]
    while stack:
        node_id = stack.pop()
        if node_id in reached or node_id not in tree.nodes:
            continue
        reached.add(node_id)
        stack.extend(tree.nodes[node_id].child_ids)
    orphans = sorted(set(tree.nodes) - reached)
    for node_id in orphans:
        problems.append(f"node {node_id}: not reachable from the root")

    return problems
