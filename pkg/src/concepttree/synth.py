"""Hand-built concept spaces and image sets for tests and demos.

The geometry here is chosen so the expected behavior is computable by
hand. ``two_cluster_space`` plants two orthogonal concept modes and is the
workhorse for trainer checks. ``hierarchical_space`` plants one isolated
mode plus a pair of nearby sub-modes, which is the smallest world where a
depth-2 build shows every interesting outcome: the root splits, the pure
side stops (its children stay indistinguishable), and the mixed side
splits into the two sub-modes.
"""

from __future__ import annotations

import math

import numpy as np

from .core import BuildConfig, ImageRef, ImageSet, ImageSource
from .mock import ConceptSpace

TWO_CLUSTER_DIM = 8
HIER_DIM = 16

# the hierarchical build converges at unit scale with a larger step than
# real latent-diffusion training uses; everything else keeps its default
FIXTURE_LEARNING_RATE = 0.08


def _unit(dim: int, axis: int, scale: float = 1.0) -> np.ndarray:
    vec = np.zeros(dim)
    vec[axis] = scale
    return vec


def _object_word(dim: int) -> np.ndarray:
    return np.full(dim, 1.0 / math.sqrt(dim))


def two_cluster_space(
    dim: int = TWO_CLUSTER_DIM,
    sigma_gen: float = 0.05,
    specialization: float = 0.8,
) -> ConceptSpace:
    """Two orthogonal planted modes on the first two axes."""
    return ConceptSpace(
        dimension=dim,
        sigma_gen=sigma_gen,
        specialization=specialization,
        words={"object": _object_word(dim)},
        atoms={"mode-a": _unit(dim, 0), "mode-b": _unit(dim, 1)},
    )


def cluster_images(
    centers: dict[str, np.ndarray],
    counts: dict[str, int],
    seed: int,
    spread: float = 0.05,
    id_prefix: str = "u",
) -> ImageSet:
    """User-provided image set: ``counts[name]`` samples around each center.

    Samples interleave over the centers so any prefix of the set stays
    roughly balanced, mirroring how a person would photograph a concept
    from alternating angles.
    """
    rng = np.random.default_rng(seed)
    names = list(centers)
    order: list[str] = []
    remaining = dict(counts)
    while any(remaining[n] > 0 for n in names):
        for name in names:
            if remaining[name] > 0:
                order.append(name)
                remaining[name] -= 1
    refs = []
    rows = []
    for idx, name in enumerate(order):
        vec = np.asarray(centers[name], dtype=np.float64)
        sample = (vec + spread * rng.standard_normal(vec.size)).astype(np.float32)
        refs.append(
            ImageRef(
                image_id=f"{id_prefix}-{name}-{idx}",
                payload=sample,
                source=ImageSource.USER,
            )
        )
        rows.append(sample)
    return ImageSet(tuple(refs), cached_embeddings=np.stack(rows))


def two_cluster_images(
    space: ConceptSpace, per_side: int = 5, seed: int = 0, spread: float = 0.05
) -> ImageSet:
    names = list(space.atoms)
    return cluster_images(
        {name: space.atoms[name] for name in names},
        {name: per_side for name in names},
        seed=seed,
        spread=spread,
    )


def hierarchical_space(
    sigma_gen: float = 0.02, specialization: float = 0.8
) -> ConceptSpace:
    """One isolated mode and two nearby sub-modes.

    ``solo`` sits on its own axis. ``duo-a`` and ``duo-b`` share an axis and
    differ on a third, with cosine 0.6 between them: coherent enough to read
    as one concept when mixed, distinct enough to separate when split.
    """
    dim = HIER_DIM
    solo = _unit(dim, 0)
    duo_a = _unit(dim, 1) + _unit(dim, 2, 0.5)
    duo_b = _unit(dim, 1) - _unit(dim, 2, 0.5)
    return ConceptSpace(
        dimension=dim,
        sigma_gen=sigma_gen,
        specialization=specialization,
        words={"object": _object_word(dim)},
        atoms={"solo": solo, "duo-a": duo_a, "duo-b": duo_b},
    )


def hierarchical_images(
    space: ConceptSpace,
    counts: tuple[int, int, int] = (4, 3, 3),
    seed: int = 7,
    spread: float = 0.02,
) -> ImageSet:
    """Root image set over the hierarchical space: solo, duo-a, duo-b counts."""
    names = list(space.atoms)
    return cluster_images(
        {name: space.atoms[name] for name in names},
        dict(zip(names, counts)),
        seed=seed,
        spread=spread,
    )


def fixture_config(**overrides) -> BuildConfig:
    """Default build configuration scaled for the synthetic spaces.

    Exemplar init gives each candidate seed its own starting partition; at
    unit scale the surrogate loss otherwise traps every seed in the same
    one-sided optimum.
    """
    values = {"learning_rate": FIXTURE_LEARNING_RATE, "init_strategy": "exemplar"}
    values.update(overrides)
    return BuildConfig(**values)
