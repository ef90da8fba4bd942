"""Set-consistency scoring, seed selection, curation, and the stop rule.

The consistency of two image sets is the mean pairwise cosine similarity
of their embeddings. Scoring one set against itself skips the self-pairs
(i = j), so a set of near-duplicates scores close to 1 while an incoherent
set scores low. Scores always lie in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    BuildConfig,
    CandidatePair,
    ConceptTreeError,
    ConsistencyReport,
    ImageRef,
    ImageSet,
)

Embedder = Callable[[ImageRef], np.ndarray]


class ScoringError(ConceptTreeError, ValueError):
    pass


class EmptyCandidatesError(ScoringError):
    pass


def _embeddings(image_set: ImageSet, embedder: Embedder | None) -> np.ndarray:
    """Embedding matrix for a set, filling the cache on first use."""
    if image_set.cached_embeddings is not None:
        return np.asarray(image_set.cached_embeddings, dtype=np.float64)
    if embedder is None:
        raise ScoringError("set has no cached embeddings and no embedder was given")
    rows = [np.asarray(embedder(image), dtype=np.float64).reshape(-1) for image in image_set]
    mat = np.stack(rows)
    image_set.cached_embeddings = mat.astype(np.float32)
    return mat


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise ScoringError("cannot take cosine similarity of zero or non-finite embeddings")
    return mat / norms


def consistency(
    set_a: ImageSet, set_b: ImageSet, embedder: Embedder | None = None
) -> float:
    """Mean pairwise cosine similarity between two sets.

    Passing the same object twice measures self-consistency: the mean over
    unordered distinct pairs, which needs at least two images. Cross
    consistency averages over the full pair grid and allows singletons.
    """
    self_mode = set_a is set_b
    if self_mode:
        if len(set_a) < 2:
            raise ScoringError("self-consistency needs at least two images")
    elif len(set_a) == 0 or len(set_b) == 0:
        raise ScoringError("consistency needs non-empty sets")

    a = _normalize_rows(_embeddings(set_a, embedder))
    if self_mode:
        gram = a @ a.T
        n = a.shape[0]
        return float((gram.sum() - np.trace(gram)) / (n * (n - 1)))
    b = _normalize_rows(_embeddings(set_b, embedder))
    return float((a @ b.T).mean())


def score_candidate(
    left_samples: ImageSet,
    right_samples: ImageSet,
    embedder: Embedder | None = None,
) -> ConsistencyReport:
    """Score a trained sibling pair from its two generated sample sets."""
    return ConsistencyReport.from_scores(
        self_left=consistency(left_samples, left_samples, embedder),
        self_right=consistency(right_samples, right_samples, embedder),
        cross=consistency(left_samples, right_samples, embedder),
    )


def select_best_seed(candidates: Sequence[CandidatePair]) -> CandidatePair:
    """Candidate with the highest selection objective; ties take the lowest seed."""
    if not candidates:
        raise EmptyCandidatesError("no candidates to select from")
    return min(candidates, key=lambda c: (-c.report.objective, c.seed))


def curate_training_set(
    pool: ImageSet, n: int, embedder: Embedder | None = None
) -> ImageSet:
    """Keep the n pool members most consistent with the rest of the pool.

    Members are ranked by mean cosine similarity to all other pool members,
    descending; rank ties keep the earlier pool index. The result preserves
    rank order.
    """
    if n < 1:
        raise ScoringError(f"n must be positive, got {n}")
    if len(pool) < 2:
        raise ScoringError("curation needs a pool of at least two images")
    if n > len(pool):
        raise ScoringError(f"cannot curate {n} images from a pool of {len(pool)}")
    normalized = _normalize_rows(_embeddings(pool, embedder))
    gram = normalized @ normalized.T
    size = len(pool)
    mean_sim = (gram.sum(axis=1) - np.diag(gram)) / (size - 1)
    ranked = sorted(range(size), key=lambda i: (-mean_sim[i], i))
    return pool.subset(ranked[:n])


class StopDecision(str, Enum):
    SPLIT_OK = "split-ok"
    LEAF_INCOHERENT = "leaf-incoherent"
    LEAF_NOT_DISTINCT = "leaf-not-distinct"


def evaluate_stop(report: ConsistencyReport, config: BuildConfig) -> StopDecision:
    """Stop rule for a finalized split.

    Incoherence is checked before indistinctness: a pair whose weaker child
    falls below the self-coherency threshold is incoherent even when the
    siblings are also too similar.
    """
    if report.min_self < config.self_coherency_threshold:
        return StopDecision.LEAF_INCOHERENT
    if report.cross >= config.sibling_distinctness_threshold:
        return StopDecision.LEAF_NOT_DISTINCT
    return StopDecision.SPLIT_OK


def measure_reconstruction(
    parent_set: ImageSet, joint_set: ImageSet, embedder: Embedder | None = None
) -> float:
    """How well images prompted with both child tokens match the parent set."""
    return consistency(parent_set, joint_set, embedder)


@dataclass(eq=False)
class ConsistencyMatrix:
    """Pairwise consistency over named sets; diagonal entries are self scores."""

    labels: tuple[str, ...]
    scores: np.ndarray

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels),
            "scores": [[float(x) for x in row] for row in self.scores],
        }


def consistency_matrix(
    named_sets: Mapping[str, ImageSet] | Sequence[tuple[str, ImageSet]],
    embedder: Embedder | None = None,
) -> ConsistencyMatrix:
    items = list(named_sets.items()) if isinstance(named_sets, Mapping) else list(named_sets)
    if not items:
        raise ScoringError("consistency matrix needs at least one set")
    labels = tuple(label for label, _ in items)
    if len(set(labels)) != len(labels):
        raise ScoringError("set labels must be unique")
    size = len(items)
    scores = np.zeros((size, size))
    for i in range(size):
        scores[i, i] = consistency(items[i][1], items[i][1], embedder)
        for j in range(i + 1, size):
            value = consistency(items[i][1], items[j][1], embedder)
            scores[i, j] = scores[j, i] = value
    return ConsistencyMatrix(labels=labels, scores=scores)


def render_heatmap(matrix: ConsistencyMatrix, path) -> None:
    """Write the matrix as a PNG heatmap (scores annotated per cell)."""
    # imported here so scoring stays usable without a display stack
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    size = len(matrix.labels)
    fig, ax = plt.subplots(figsize=(1.1 * size + 2, 1.1 * size + 1.5))
    image = ax.imshow(matrix.scores, vmin=-1.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(size), labels=matrix.labels, rotation=45, ha="right")
    ax.set_yticks(range(size), labels=matrix.labels)
    for i in range(size):
        for j in range(size):
            ax.text(
                j,
                i,
                f"{matrix.scores[i, j]:.2f}",
                ha="center",
                va="center",
                color="white" if matrix.scores[i, j] < 0.5 else "black",
                fontsize=9,
            )
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
