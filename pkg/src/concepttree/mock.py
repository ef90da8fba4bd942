"""Deterministic mock backend over a synthetic concept space.

The mock represents every image by a point in a d-dimensional concept
space. Encoding and embedding are the identity on that point, so every
algorithmic claim in the pipeline can be checked against closed-form
oracles at desk scale.

Training loss. The mock denoiser assumes the clean latent equals the
conditioning vector built from the prompt's resolvable tokens, predicts the
noise implied by that assumption, and scores the mean squared error against
the true noise. The schedule holds signal and noise coefficients equal, so
the residual reduces exactly to (conditioning - latent) and the loss to the
quadratic surrogate ||conditioning - z||^2 averaged over the batch.

With a single prompt token the conditioning is that token's vector. With
several, the conditioning for a batch item blends the token mean with the
token nearest to that item's latent:

    c_b = (1 - w) * mean(tokens) + w * tokens[nearest(z_b)]

where ``w`` is the space's ``specialization`` weight. At ``w = 0`` this is
the plain token mean, whose gradient has the textbook closed form. A
positive ``w`` routes each latent to the token that best explains it, which
is what lets two sibling tokens settle on different modes of the parent
set instead of collapsing onto its centroid. Nearest-token ties alternate
over batch position, so two identically initialized siblings separate.

Generation. A prompt is generated by sampling around the prompt
conditioning: plain spaces return conditioning + sigma_gen * noise. Spaces
may also declare named "atoms", the planted modes the pretrained model
knows; generation then samples uniformly over the atoms within
``containment_radius`` of the conditioning (nearest atom if none fall
inside), with deterministic proportional interleaving. Atoms are how a
desk-scale space encodes that a broad concept contains recoverable
sub-concepts.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .backend import (
    BackendBatch,
    BackendError,
    DecodeError,
    DiffusionBackend,
    NoiseSchedule,
    NotTrainableError,
    PromptResolutionError,
    TrainStepResult,
    noise_latent,
)
from .core import EMBED_DTYPE, ConfigError, ImageRef, ImageSet, ImageSource
from .dictionary import TokenDictionary


@dataclass(eq=False)
class ConceptSpace:
    """Synthetic world the mock backend lives in.

    ``words`` is the base vocabulary (it must contain the init word used to
    seed new tokens). ``atoms`` are optional planted concept modes used by
    generation; their insertion order is meaningful (deterministic
    tie-breaking). ``sigma_gen`` is the generation noise scale.
    """

    dimension: int
    sigma_gen: float = 0.05
    specialization: float = 0.8
    containment_radius: float = 0.9
    words: dict[str, np.ndarray] = field(default_factory=dict)
    atoms: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ConfigError("dimension must be positive")
        if self.sigma_gen < 0:
            raise ConfigError("sigma_gen must be >= 0")
        if not 0.0 <= self.specialization <= 1.0:
            raise ConfigError("specialization must lie in [0, 1]")
        if self.containment_radius <= 0:
            raise ConfigError("containment_radius must be positive")
        self.words = {
            w: np.asarray(v, dtype=np.float64).reshape(self.dimension)
            for w, v in self.words.items()
        }
        self.atoms = {
            a: np.asarray(v, dtype=np.float64).reshape(self.dimension)
            for a, v in self.atoms.items()
        }

    @classmethod
    def default(cls, dimension: int = 16) -> "ConceptSpace":
        words = {"object": np.full(dimension, 1.0 / math.sqrt(dimension))}
        return cls(dimension=dimension, words=words)

    @classmethod
    def from_json(cls, payload: Mapping) -> "ConceptSpace":
        try:
            return cls(
                dimension=int(payload["dimension"]),
                sigma_gen=float(payload.get("sigma_gen", 0.05)),
                specialization=float(payload.get("specialization", 0.8)),
                containment_radius=float(payload.get("containment_radius", 0.9)),
                words={w: np.asarray(v, dtype=np.float64) for w, v in payload.get("words", {}).items()},
                atoms={a: np.asarray(v, dtype=np.float64) for a, v in payload.get("atoms", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad concept-space payload: {exc}") from exc

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "sigma_gen": self.sigma_gen,
            "specialization": self.specialization,
            "containment_radius": self.containment_radius,
            "words": {w: [float(x) for x in v] for w, v in self.words.items()},
            "atoms": {a: [float(x) for x in v] for a, v in self.atoms.items()},
        }

    @classmethod
    def from_file(cls, path: Path | str) -> "ConceptSpace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_file(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _proportional_counts(total: int, buckets: int) -> list[int]:
    base, extra = divmod(total, buckets)
    return [base + (1 if i < extra else 0) for i in range(buckets)]


def _interleave(counts: Sequence[int]) -> list[int]:
    """Emit bucket indices so every prefix tracks the target proportions."""
    total = sum(counts)
    emitted = [0] * len(counts)
    order: list[int] = []
    for pos in range(1, total + 1):
        deficits = [counts[j] * pos / total - emitted[j] for j in range(len(counts))]
        best = max(range(len(counts)), key=lambda j: (deficits[j], -j))
        order.append(best)
        emitted[best] += 1
    return order


class MockBackend(DiffusionBackend):
    """Concept-space implementation of the backend contract."""

    def __init__(self, space: ConceptSpace | None = None, total_steps: int = 1000):
        self.space = space if space is not None else ConceptSpace.default()
        if total_steps < 1:
            raise BackendError("total_steps must be positive")
        # equal signal/noise weights make the noise-prediction MSE collapse
        # to plain concept-space error; see the module docstring
        coeff = np.full(total_steps, 1.0 / math.sqrt(2.0))
        self._schedule = NoiseSchedule(
            total_steps=total_steps, alpha_bar=coeff, sigma=coeff.copy()
        )
        base = {}
        for word, vec in self.space.words.items():
            frozen = vec.astype(EMBED_DTYPE)
            frozen.flags.writeable = False
            base[word] = frozen
        self._base = MappingProxyType(base)
        self._atom_names = tuple(self.space.atoms)
        self._atom_matrix = (
            np.stack([self.space.atoms[a] for a in self._atom_names])
            if self._atom_names
            else None
        )

    # -- basic properties --------------------------------------------------

    @property
    def latent_dim(self) -> int:
        return self.space.dimension

    @property
    def embed_dim(self) -> int:
        return self.space.dimension

    @property
    def schedule(self) -> NoiseSchedule:
        return self._schedule

    def base_vocabulary(self) -> Mapping[str, np.ndarray]:
        return self._base

    def vocabulary_checksum(self) -> str:
        digest = hashlib.blake2b(digest_size=16)
        digest.update(f"{self.space.dimension}|{self.space.sigma_gen}|".encode())
        digest.update(
            f"{self.space.specialization}|{self.space.containment_radius}".encode()
        )
        for name in sorted(self._base):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self._base[name]).tobytes())
        for name in self._atom_names:
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.space.atoms[name]).tobytes())
        return digest.hexdigest()

    # -- images -------------------------------------------------------------

    def _vector_of(self, image: ImageRef) -> np.ndarray:
        payload = image.payload
        if isinstance(payload, Path):
            from .store import read_vector  # local import to avoid a cycle

            payload = read_vector(payload)
        if not isinstance(payload, np.ndarray):
            raise DecodeError(
                f"mock image {image.image_id!r} carries no concept vector"
            )
        vec = np.asarray(payload, dtype=np.float64).reshape(-1)
        if vec.size != self.space.dimension:
            raise DecodeError(
                f"image {image.image_id!r} has dimension {vec.size}, "
                f"space expects {self.space.dimension}"
            )
        if not np.all(np.isfinite(vec)):
            raise DecodeError(f"image {image.image_id!r} has non-finite entries")
        return vec

    def encode_image(self, image: ImageRef) -> np.ndarray:
        return self._vector_of(image)

    def embed_image(self, image: ImageRef) -> np.ndarray:
        return self._vector_of(image).astype(EMBED_DTYPE)

    # -- prompts ------------------------------------------------------------

    def _condition_tokens(
        self, prompt: str, dictionary: TokenDictionary | None
    ) -> tuple[list[str], np.ndarray]:
        """Resolve prompt words to vectors; unresolvable words are ignored.

        Injected tokens win over base words; the backend's own vocabulary
        answers for base words even when the dictionary was restored from
        disk without one.
        """
        names: list[str] = []
        vectors: list[np.ndarray] = []
        for word in prompt.split():
            vec = None
            if dictionary is not None:
                hit = dictionary.injected.get(word)
                if hit is not None:
                    vec = np.asarray(hit, dtype=np.float64)
            if vec is None and word in self._base:
                vec = np.asarray(self._base[word], dtype=np.float64)
            if vec is not None:
                names.append(word)
                vectors.append(vec)
        if not names:
            raise PromptResolutionError(
                f"no word of prompt {prompt!r} resolves to an embedding"
            )
        return names, np.stack(vectors)

    def prompt_conditioning(
        self, prompt: str, dictionary: TokenDictionary | None = None
    ) -> np.ndarray:
        """Mean embedding of the prompt's resolvable tokens."""
        _, vectors = self._condition_tokens(prompt, dictionary)
        return vectors.mean(axis=0)

    # -- training -------------------------------------------------------------

    def loss_and_gradient(
        self,
        batch: BackendBatch,
        dictionary: TokenDictionary,
        trainable: Sequence[str],
    ) -> TrainStepResult:
        trainable = list(trainable)
        for token in trainable:
            if token not in dictionary.injected:
                raise NotTrainableError(
                    f"token {token!r} is not an injected token and cannot be trained"
                )
        names, tokens = self._condition_tokens(batch.prompt, dictionary)
        m = len(names)
        mix = self.space.specialization if m >= 2 else 0.0
        mean_vec = tokens.mean(axis=0)

        grads = {token: np.zeros(self.space.dimension) for token in trainable}
        total = 0.0
        batch_size = len(batch)
        for b in range(batch_size):
            z = batch.latents[b]
            t = batch.timesteps[b]
            eps = batch.noises[b]
            if mix > 0.0:
                dists = np.linalg.norm(tokens - z, axis=1)
                tied = np.flatnonzero(dists == dists.min())
                # alternate ties over batch position so identically
                # initialized siblings receive different pulls
                assigned = int(tied[b % len(tied)])
                cond = (1.0 - mix) * mean_vec + mix * tokens[assigned]
            else:
                assigned = -1
                cond = mean_vec

            ratio = self._schedule.alpha_bar[t - 1] / self._schedule.sigma[t - 1]
            z_t = noise_latent(z, t, eps, self._schedule)
            predicted = (z_t - self._schedule.alpha_bar[t - 1] * cond) / self._schedule.sigma[t - 1]
            residual = eps - predicted
            total += float(residual @ residual)

            coeff = 2.0 * ratio / batch_size
            for j, name in enumerate(names):
                if name not in grads:
                    continue
                weight = (1.0 - mix) / m + (mix if j == assigned else 0.0)
                if weight != 0.0:
                    grads[name] += coeff * weight * residual

        return TrainStepResult(loss=total / batch_size, gradients=grads)

    # -- generation -------------------------------------------------------------

    def generate(
        self, prompt: str, dictionary: TokenDictionary, seed: int, count: int
    ) -> ImageSet:
        if count < 1:
            raise BackendError(f"count must be >= 1, got {count}")
        conditioning = self.prompt_conditioning(prompt, dictionary)
        if self._atom_matrix is not None:
            dists = np.linalg.norm(self._atom_matrix - conditioning, axis=1)
            inside = np.flatnonzero(dists <= self.space.containment_radius)
            if inside.size == 0:
                inside = np.array([int(np.argmin(dists))])
            counts = _proportional_counts(count, inside.size)
            order = _interleave(counts)
            centers = [self._atom_matrix[inside[j]] for j in order]
        else:
            centers = [conditioning] * count

        rng = np.random.default_rng(seed)
        refs: list[ImageRef] = []
        rows: list[np.ndarray] = []
        for i, center in enumerate(centers):
            vec = center + self.space.sigma_gen * rng.standard_normal(self.space.dimension)
            vec32 = vec.astype(EMBED_DTYPE)
            tag = hashlib.blake2b(
                f"{prompt}\x1f{seed}\x1f{i}".encode("utf-8"), digest_size=8
            ).hexdigest()
            refs.append(
                ImageRef(
                    image_id=f"g{tag}-{i}",
                    payload=vec32,
                    source=ImageSource.GENERATED,
                    seed=seed,
                    prompt=prompt,
                )
            )
            rows.append(vec32)
        return ImageSet(tuple(refs), cached_embeddings=np.stack(rows))
