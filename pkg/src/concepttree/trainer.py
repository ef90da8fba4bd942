"""SGD optimization of sibling token embeddings.

A training job owns everything one candidate needs: the parent image set,
the tokens being fitted, an isolated dictionary copy, a seeded random
stream, and the running loss history. Each step draws a minibatch of parent
latents (uniform with replacement), per-item timesteps from the
importance-skewed distribution, and fresh Gaussian noise, then takes one
plain SGD step on the backend's denoising loss. Only the job's tokens
change; the base vocabulary and every other injected token stay untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backend import BackendBatch, DiffusionBackend
from .core import EMBED_DTYPE, BuildConfig, ConceptTreeError, ImageSet
from .dictionary import TokenDictionary
from .timesteps import TimestepDistribution, build_distribution, sample_many

ProgressCallback = Callable[["TrainJob", int, float], None]


class TrainerError(ConceptTreeError):
    pass


class TrainingDivergedError(TrainerError):
    """Raised when the loss or an update becomes non-finite."""


@dataclass(eq=False)
class TrainJob:
    """State of one optimization run over a pair (or triple) of tokens."""

    parent_images: ImageSet
    tokens: tuple[str, ...]
    dictionary: TokenDictionary
    config: BuildConfig
    seed: int
    backend: DiffusionBackend
    step_counter: int = 0
    loss_history: list[float] = field(default_factory=list)
    timestep_counts: np.ndarray | None = None
    on_step: ProgressCallback | None = None

    def __post_init__(self) -> None:
        if len(self.parent_images) == 0:
            raise TrainerError("training needs a non-empty parent image set")
        self.tokens = tuple(self.tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise TrainerError("training tokens must be distinct")
        for token in self.tokens:
            if token not in self.dictionary.injected:
                raise TrainerError(f"token {token!r} is not in the injected layer")
        self.prompt = self.dictionary.compose_prompt(
            self.config.train_template, self.tokens
        )
        self.distribution: TimestepDistribution = build_distribution(
            self.backend.schedule.total_steps, self.config.alpha
        )
        self._rng = np.random.default_rng(self.seed)
        self._latents = np.stack(
            [self.backend.encode_image(image) for image in self.parent_images]
        ).astype(np.float64)
        if self.timestep_counts is None:
            self.timestep_counts = np.zeros(
                self.backend.schedule.total_steps, dtype=np.int64
            )

    @property
    def left_token(self) -> str:
        return self.tokens[0]

    @property
    def right_token(self) -> str:
        return self.tokens[-1]


def train_pair(job: TrainJob, steps: int) -> tuple[TokenDictionary, list[float]]:
    """Advance a job by ``steps`` SGD steps; returns (dictionary, loss history).

    The job is updated in place (dictionary, step counter, histories); the
    return value is a convenience for callers that only want the result.
    """
    if steps < 1:
        raise TrainerError(f"steps must be positive, got {steps}")
    if job.step_counter + steps > job.config.final_steps:
        raise TrainerError(
            f"step budget exceeded: {job.step_counter} + {steps} > {job.config.final_steps}"
        )
    batch_size = job.config.batch_size
    pool_size = job._latents.shape[0]
    lr = job.config.learning_rate

    for _ in range(steps):
        picks = job._rng.integers(0, pool_size, size=batch_size)
        timesteps = sample_many(job.distribution, job._rng, batch_size)
        noises = job._rng.standard_normal((batch_size, job._latents.shape[1]))
        np.add.at(job.timestep_counts, timesteps - 1, 1)

        batch = BackendBatch(
            latents=job._latents[picks],
            timesteps=tuple(int(t) for t in timesteps),
            noises=noises,
            prompt=job.prompt,
        )
        result = job.backend.loss_and_gradient(batch, job.dictionary, job.tokens)
        if not np.isfinite(result.loss):
            raise TrainingDivergedError(
                f"non-finite loss at step {job.step_counter + 1}"
            )
        for token in job.tokens:
            grad = np.asarray(result.gradients[token], dtype=np.float64)
            if not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(
                    f"non-finite gradient for {token!r} at step {job.step_counter + 1}"
                )
            current = job.dictionary.injected[token].astype(np.float64)
            # the float32 cast can overflow to inf long before the float64
            # loss does, so divergence is caught on the stored value
            with np.errstate(over="ignore"):
                updated = (current - lr * grad).astype(EMBED_DTYPE)
            if not np.all(np.isfinite(updated)):
                raise TrainingDivergedError(
                    f"embedding for {token!r} overflowed at step {job.step_counter + 1}"
                )
            job.dictionary = job.dictionary.update_embedding(token, updated)

        job.step_counter += 1
        job.loss_history.append(float(result.loss))
        if job.on_step is not None:
            job.on_step(job, job.step_counter, float(result.loss))

    return job.dictionary, job.loss_history


def snapshot_embeddings(job: TrainJob) -> dict[str, np.ndarray]:
    """Independent copies of the job tokens' current embeddings."""
    return {token: job.dictionary.injected[token].copy() for token in job.tokens}
