"""Latent-diffusion backend over a pretrained text-to-image pipeline.

Everything heavyweight (torch, diffusers, transformers) is imported lazily
so the rest of the package works without them; constructing the backend
raises ``BackendUnavailableError`` when the stack or the weights are
missing. Latents and image embeddings are exposed as flat float vectors to
satisfy the backend contract; the pipeline's native tensor shapes are an
internal detail.

This adapter is exercised by an opt-in smoke test only: it needs model
weights and a GPU-class machine to be useful.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .backend import (
    BackendBatch,
    BackendError,
    BackendUnavailableError,
    DecodeError,
    DiffusionBackend,
    NoiseSchedule,
    NotTrainableError,
    PromptResolutionError,
    TrainStepResult,
)
from .core import EMBED_DTYPE, ImageRef, ImageSet, ImageSource
from .dictionary import TokenDictionary

DEFAULT_MODEL = "runwayml/stable-diffusion-v1-5"
DEFAULT_CLIP = "openai/clip-vit-large-patch14"


class _VocabularyView(Mapping):
    """Read-only mapping over the pipeline's token embedding table.

    The table has tens of thousands of rows; this resolves words on demand
    instead of materializing a dict.
    """

    def __init__(self, tokenizer, weight):
        self._tokenizer = tokenizer
        self._weight = weight
        self._vocab = tokenizer.get_vocab()

    def _token_id(self, word: str) -> int | None:
        ids = self._tokenizer.encode(word, add_special_tokens=False)
        if len(ids) != 1:
            return None
        return ids[0]

    def __contains__(self, word) -> bool:
        return isinstance(word, str) and self._token_id(word) is not None

    def __getitem__(self, word: str) -> np.ndarray:
        token_id = self._token_id(word)
        if token_id is None:
            raise KeyError(word)
        row = self._weight[token_id].detach().cpu().numpy().astype(EMBED_DTYPE)
        row.flags.writeable = False
        return row

    def __iter__(self):
        return iter(self._vocab)

    def __len__(self) -> int:
        return len(self._vocab)


class RealBackend(DiffusionBackend):
    """Backend over a frozen latent-diffusion pipeline plus a CLIP scorer."""

    def __init__(
        self,
        model_id: str = DEFAULT_MODEL,
        clip_id: str = DEFAULT_CLIP,
        device: str | None = None,
        inference_steps: int = 30,
        guidance_scale: float = 7.5,
    ):
        try:
            import torch
            from diffusers import StableDiffusionPipeline
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackendUnavailableError(
                "the real backend needs torch, diffusers and transformers; "
                "install the package with the [real] extra"
            ) from exc
        self._torch = torch
        if device is None:
            device = "cuda" if torch.cuda.is_available() else "cpu"
        self.device = device
        self.inference_steps = inference_steps
        self.guidance_scale = guidance_scale
        try:
            self.pipeline = StableDiffusionPipeline.from_pretrained(
                model_id, safety_checker=None
            ).to(device)
            self.clip = CLIPModel.from_pretrained(clip_id).to(device)
            self.clip_processor = CLIPProcessor.from_pretrained(clip_id)
        except Exception as exc:
            raise BackendUnavailableError(
                f"cannot load model weights for {model_id!r}: {exc}"
            ) from exc
        self.pipeline.vae.requires_grad_(False)
        self.pipeline.unet.requires_grad_(False)
        self.pipeline.text_encoder.requires_grad_(False)
        self.model_id = model_id

        scheduler = self.pipeline.scheduler
        alphas = scheduler.alphas_cumprod.detach().cpu().numpy().astype(np.float64)
        self._noise_schedule = NoiseSchedule(
            total_steps=len(alphas),
            alpha_bar=np.sqrt(alphas),
            sigma=np.sqrt(1.0 - alphas),
        )
        embedding = self.pipeline.text_encoder.get_input_embeddings()
        self._vocabulary = _VocabularyView(self.pipeline.tokenizer, embedding.weight)
        sample = self.pipeline.unet.config.sample_size
        channels = self.pipeline.unet.config.in_channels
        self._latent_shape = (channels, sample, sample)

    # -- properties --------------------------------------------------------

    @property
    def latent_dim(self) -> int:
        c, h, w = self._latent_shape
        return c * h * w

    @property
    def embed_dim(self) -> int:
        return self.pipeline.text_encoder.get_input_embeddings().weight.shape[1]

    @property
    def schedule(self) -> NoiseSchedule:
        return self._noise_schedule

    def base_vocabulary(self) -> Mapping[str, np.ndarray]:
        return self._vocabulary

    def vocabulary_checksum(self) -> str:
        digest = hashlib.blake2b(digest_size=16)
        digest.update(self.model_id.encode())
        weight = self.pipeline.text_encoder.get_input_embeddings().weight
        digest.update(str(tuple(weight.shape)).encode())
        # hashing the full table is slow; corner rows pin the weights well
        # enough to catch a swapped model
        corner = weight[:64].detach().cpu().numpy().astype(np.float32)
        digest.update(corner.tobytes())
        return digest.hexdigest()

    # -- images --------------------------------------------------------------

    def _pil_of(self, image: ImageRef):
        from PIL import Image

        payload = image.payload
        if isinstance(payload, Path):
            payload = payload.read_bytes()
        if isinstance(payload, bytes):
            try:
                return Image.open(io.BytesIO(payload)).convert("RGB")
            except Exception as exc:
                raise DecodeError(f"image {image.image_id!r}: {exc}") from exc
        raise DecodeError(f"image {image.image_id!r} carries no decodable payload")

    def encode_image(self, image: ImageRef) -> np.ndarray:
        torch = self._torch
        pil = self._pil_of(image).resize((512, 512))
        array = np.asarray(pil, dtype=np.float32) / 127.5 - 1.0
        tensor = torch.from_numpy(array).permute(2, 0, 1).unsqueeze(0).to(self.device)
        with torch.no_grad():
            latent = self.pipeline.vae.encode(tensor).latent_dist.mean
            latent = latent * self.pipeline.vae.config.scaling_factor
        return latent.reshape(-1).cpu().numpy().astype(np.float64)

    def embed_image(self, image: ImageRef) -> np.ndarray:
        torch = self._torch
        pil = self._pil_of(image)
        inputs = self.clip_processor(images=pil, return_tensors="pt").to(self.device)
        with torch.no_grad():
            features = self.clip.get_image_features(**inputs)
        return features.reshape(-1).cpu().numpy().astype(EMBED_DTYPE)

    # -- prompts ---------------------------------------------------------------

    def _encode_prompt(self, prompt: str, dictionary: TokenDictionary | None):
        """Token ids plus an input-embedding matrix with injected rows swapped in."""
        torch = self._torch
        tokenizer = self.pipeline.tokenizer
        injected = dict(dictionary.injected) if dictionary is not None else {}
        words = prompt.split()
        known = [w for w in words if w in injected or w in self._vocabulary]
        if not known:
            raise PromptResolutionError(
                f"no word of prompt {prompt!r} resolves to an embedding"
            )
        # injected tokens are not in the tokenizer vocabulary; mark their
        # slots with the unk token and overwrite those embedding rows
        marker = tokenizer.unk_token
        surface = [marker if w in injected else w for w in words]
        encoded = tokenizer(
            " ".join(surface),
            padding="max_length",
            max_length=tokenizer.model_max_length,
            truncation=True,
            return_tensors="pt",
        ).input_ids.to(self.device)
        embedding = self.pipeline.text_encoder.get_input_embeddings()
        rows = embedding(encoded)
        injected_order = [w for w in words if w in injected]
        marker_positions = (encoded[0] == tokenizer.unk_token_id).nonzero().reshape(-1)
        overrides = {}
        for pos, word in zip(marker_positions.tolist(), injected_order):
            leaf = torch.tensor(
                np.asarray(injected[word], dtype=np.float32),
                device=self.device,
                requires_grad=True,
            )
            rows = rows.clone()
            rows[0, pos] = leaf
            overrides[word] = leaf
        return rows, overrides

    def _text_conditioning(self, prompt: str, dictionary: TokenDictionary | None):
        rows, overrides = self._encode_prompt(prompt, dictionary)
        states = self.pipeline.text_encoder(inputs_embeds=rows).last_hidden_state
        return states, overrides

    def _empty_conditioning(self):
        tokenizer = self.pipeline.tokenizer
        encoded = tokenizer(
            "",
            padding="max_length",
            max_length=tokenizer.model_max_length,
            return_tensors="pt",
        ).input_ids.to(self.device)
        return self.pipeline.text_encoder(encoded).last_hidden_state

    # -- training -------------------------------------------------------------

    def loss_and_gradient(
        self,
        batch: BackendBatch,
        dictionary: TokenDictionary,
        trainable: Sequence[str],
    ) -> TrainStepResult:
        torch = self._torch
        for token in trainable:
            if token not in dictionary.injected:
                raise NotTrainableError(f"token {token!r} is not injected")
        states, overrides = self._text_conditioning(batch.prompt, dictionary)
        missing = [t for t in trainable if t not in overrides]
        if missing:
            raise NotTrainableError(
                f"trainable tokens {missing} do not appear in prompt {batch.prompt!r}"
            )
        latents = torch.from_numpy(
            np.asarray(batch.latents, dtype=np.float32).reshape(
                (len(batch), *self._latent_shape)
            )
        ).to(self.device)
        noises = torch.from_numpy(
            np.asarray(batch.noises, dtype=np.float32).reshape(latents.shape)
        ).to(self.device)
        steps = torch.tensor(
            [t - 1 for t in batch.timesteps], device=self.device, dtype=torch.long
        )
        noisy = self.pipeline.scheduler.add_noise(latents, noises, steps)
        conditioning = states.expand(len(batch), -1, -1)
        predicted = self.pipeline.unet(noisy, steps, conditioning).sample
        loss = torch.nn.functional.mse_loss(predicted, noises)
        grads = torch.autograd.grad(loss, [overrides[t] for t in trainable])
        return TrainStepResult(
            loss=float(loss.detach().cpu()),
            gradients={
                token: grad.detach().cpu().numpy().astype(np.float64)
                for token, grad in zip(trainable, grads)
            },
        )

    # -- generation -----------------------------------------------------------

    def generate(
        self, prompt: str, dictionary: TokenDictionary, seed: int, count: int
    ) -> ImageSet:
        torch = self._torch
        if count < 1:
            raise BackendError(f"count must be >= 1, got {count}")
        with torch.no_grad():
            states, _ = self._text_conditioning(prompt, dictionary)
            negative = self._empty_conditioning()
        generator = torch.Generator(device=self.device).manual_seed(seed)
        result = self.pipeline(
            prompt_embeds=states.expand(count, -1, -1),
            negative_prompt_embeds=negative.expand(count, -1, -1),
            num_inference_steps=self.inference_steps,
            guidance_scale=self.guidance_scale,
            generator=generator,
        )
        refs = []
        for i, pil in enumerate(result.images):
            buffer = io.BytesIO()
            pil.save(buffer, format="PNG")
            tag = hashlib.blake2b(
                f"{prompt}\x1f{seed}\x1f{i}".encode(), digest_size=8
            ).hexdigest()
            refs.append(
                ImageRef(
                    image_id=f"g{tag}-{i}",
                    payload=buffer.getvalue(),
                    source=ImageSource.GENERATED,
                    seed=seed,
                    prompt=prompt,
                )
            )
        return ImageSet(tuple(refs))
