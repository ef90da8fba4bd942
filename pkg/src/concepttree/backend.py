"""Backend contract: the bridge between trees and a text-to-image model.

A backend supplies everything concept learning needs from the underlying
diffusion model: a noise schedule, image encoding and embedding, the
denoising training loss with gradients for injected tokens, and prompt-
conditioned generation. Two implementations exist: a deterministic mock
over a synthetic concept space (``concepttree.mock``) and an adapter for a
real pretrained latent-diffusion model (``concepttree.real``).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ConceptTreeError, ImageRef, ImageSet
from .dictionary import TokenDictionary


class BackendError(ConceptTreeError):
    pass


class DecodeError(BackendError):
    """Raised for image payloads the backend cannot interpret."""


class PromptResolutionError(BackendError):
    """Raised when no word of a prompt resolves to an embedding."""


class NotTrainableError(BackendError):
    """Raised when gradients are requested for non-injected tokens."""


class GenerationError(BackendError):
    """Generation failure; ``retryable`` hints whether trying again helps."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class BackendUnavailableError(BackendError):
    """Raised when a backend's runtime dependencies are missing."""


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-timestep forward-noising coefficients, indexed by t-1 for t in {1..T}.

    ``alpha_bar[t-1]`` scales the clean latent and ``sigma[t-1]`` the noise:
    z_t = alpha_bar_t * z + sigma_t * eps.
    """

    total_steps: int
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if alpha_bar.shape != (self.total_steps,) or sigma.shape != (self.total_steps,):
            raise BackendError("schedule arrays must have length total_steps")
        for name, arr in (("alpha_bar", alpha_bar), ("sigma", sigma)):
            if np.any(arr <= 0.0) or np.any(arr > 1.0):
                raise BackendError(f"{name} entries must lie in (0, 1]")
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "sigma", sigma)


def noise_latent(
    latent: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Forward-noise a clean latent to diffusion step t."""
    if not 1 <= t <= schedule.total_steps:
        raise BackendError(f"t must lie in [1, {schedule.total_steps}], got {t}")
    latent = np.asarray(latent, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if latent.shape != noise.shape:
        raise BackendError(f"latent shape {latent.shape} != noise shape {noise.shape}")
    return schedule.alpha_bar[t - 1] * latent + schedule.sigma[t - 1] * noise


@dataclass(eq=False)
class BackendBatch:
    """One training minibatch: clean latents with per-item noise and step."""

    latents: np.ndarray
    timesteps: tuple[int, ...]
    noises: np.ndarray
    prompt: str

    def __post_init__(self) -> None:
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.noises = np.asarray(self.noises, dtype=np.float64)
        self.timesteps = tuple(int(t) for t in self.timesteps)
        if self.latents.ndim != 2:
            raise BackendError("latents must be a (batch, dim) matrix")
        if self.noises.shape != self.latents.shape:
            raise BackendError("noises must match latents in shape")
        if len(self.timesteps) != self.latents.shape[0]:
            raise BackendError("one timestep per batch item required")
        if not self.prompt:
            raise BackendError("prompt must be non-empty")

    def __len__(self) -> int:
        return self.latents.shape[0]


@dataclass(frozen=True, eq=False)
class TrainStepResult:
    loss: float
    gradients: Mapping[str, np.ndarray]


class DiffusionBackend(ABC):
    """Model-facing operations; implementations must be deterministic per seed."""

    @property
    @abstractmethod
    def latent_dim(self) -> int: ...

    @property
    @abstractmethod
    def embed_dim(self) -> int: ...

    @property
    @abstractmethod
    def schedule(self) -> NoiseSchedule: ...

    @abstractmethod
    def base_vocabulary(self) -> Mapping[str, np.ndarray]:
        """Read-only pretrained vocabulary; owns the init word."""

    @abstractmethod
    def vocabulary_checksum(self) -> str:
        """Digest over the frozen weights; training must never change it."""

    @abstractmethod
    def encode_image(self, image: ImageRef) -> np.ndarray:
        """Clean latent for an image."""

    @abstractmethod
    def embed_image(self, image: ImageRef) -> np.ndarray:
        """Embedding used for consistency scoring."""

    @abstractmethod
    def loss_and_gradient(
        self,
        batch: BackendBatch,
        dictionary: TokenDictionary,
        trainable: Sequence[str],
    ) -> TrainStepResult:
        """Noise-prediction MSE and its gradient for the trainable tokens.

        Gradients are keyed exactly by ``trainable``; tokens absent from the
        prompt receive zero gradients. Base-vocabulary words are never
        trainable.
        """

    @abstractmethod
    def generate(
        self, prompt: str, dictionary: TokenDictionary, seed: int, count: int
    ) -> ImageSet:
        """Generate ``count`` images for a prompt; seeded and reproducible."""
