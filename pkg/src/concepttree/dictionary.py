"""Two-layer token dictionary: frozen base vocabulary plus injected tokens.

The base layer belongs to the backend (its pretrained vocabulary) and is
never written through this interface. The injected layer holds the
placeholder tokens learned per tree node. All mutating operations return a
new dictionary and leave the receiver untouched, so candidate training jobs
can each work on an isolated copy.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import EMBED_DTYPE, ConceptTreeError, as_embedding


class DictionaryError(ConceptTreeError):
    pass


class DuplicateTokenError(DictionaryError):
    pass


class UnknownWordError(DictionaryError, KeyError):
    pass


class FrozenLayerError(DictionaryError):
    pass


class TokenCollisionError(DictionaryError):
    def __init__(self, tokens: Sequence[str]):
        self.tokens = tuple(tokens)
        super().__init__(f"token collision on {self.tokens}")


class VocabularyMismatchError(DictionaryError):
    pass


class TemplateArityError(DictionaryError, ValueError):
    pass


def _freeze(vec: np.ndarray) -> np.ndarray:
    out = vec.copy()
    out.flags.writeable = False
    return out


@dataclass(eq=False)
class TokenDictionary:
    """Embedding lookup for prompts.

    ``base`` may be ``None`` for dictionaries restored from an archive; such
    a dictionary still resolves its injected tokens and can be merged or
    persisted, but extending it requires a backend-provided base vocabulary
    (the init word lives there).
    """

    embed_dim: int
    base: Mapping[str, np.ndarray] | None = None
    injected: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise DictionaryError("embed_dim must be positive")
        frozen = {}
        for token, vec in dict(self.injected).items():
            frozen[token] = _freeze(as_embedding(vec, self.embed_dim))
            if self.base is not None and token in self.base:
                raise DuplicateTokenError(
                    f"token {token!r} exists in the base vocabulary"
                )
        self.injected = MappingProxyType(frozen)

    # -- lookups ---------------------------------------------------------

    def resolve(self, word: str) -> np.ndarray | None:
        """Injected layer wins; base answers otherwise; None for unknowns."""
        hit = self.injected.get(word)
        if hit is not None:
            return hit
        if self.base is not None:
            base_hit = self.base.get(word)
            if base_hit is not None:
                return np.asarray(base_hit, dtype=EMBED_DTYPE)
        return None

    def __contains__(self, word: str) -> bool:
        return self.resolve(word) is not None

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.injected)

    # -- copy-on-write operations -----------------------------------------

    def extend(self, tokens: Sequence[str], init_word: str) -> "TokenDictionary":
        """Add placeholder tokens, each starting at the init word's embedding."""
        tokens = list(tokens)
        if not tokens:
            raise DictionaryError("extend needs at least one token")
        if len(set(tokens)) != len(tokens):
            raise DuplicateTokenError(f"duplicate tokens in {tokens}")
        for token in tokens:
            if not token or any(ch in string.whitespace for ch in token):
                raise DictionaryError(f"token {token!r} must be a single word")
            if token in self.injected or (self.base is not None and token in self.base):
                raise DuplicateTokenError(f"token {token!r} already exists")
        if self.base is None:
            raise UnknownWordError(
                f"init word {init_word!r} unavailable: dictionary has no base vocabulary"
            )
        init = self.base.get(init_word)
        if init is None:
            raise UnknownWordError(f"init word {init_word!r} not in base vocabulary")
        init = as_embedding(init, self.embed_dim)
        new_injected = dict(self.injected)
        for token in tokens:
            new_injected[token] = init.copy()
        return TokenDictionary(self.embed_dim, self.base, new_injected)

    def update_embedding(self, token: str, vector) -> "TokenDictionary":
        if self.base is not None and token in self.base:
            raise FrozenLayerError(f"base vocabulary word {token!r} is frozen")
        if token not in self.injected:
            raise UnknownWordError(f"token {token!r} is not injected")
        new_injected = dict(self.injected)
        new_injected[token] = as_embedding(vector, self.embed_dim)
        return TokenDictionary(self.embed_dim, self.base, new_injected)

    def merge(self, other: "TokenDictionary") -> "TokenDictionary":
        """Union of injected layers, used to prompt across trees."""
        if self.embed_dim != other.embed_dim:
            raise VocabularyMismatchError(
                f"embed dims differ: {self.embed_dim} vs {other.embed_dim}"
            )
        if self.base is not None and other.base is not None and self.base is not other.base:
            raise VocabularyMismatchError("dictionaries use different base vocabularies")
        collisions = sorted(set(self.injected) & set(other.injected))
        if collisions:
            raise TokenCollisionError(collisions)
        merged = dict(self.injected)
        merged.update(other.injected)
        return TokenDictionary(self.embed_dim, self.base or other.base, merged)

    def without(self, tokens: Iterable[str]) -> "TokenDictionary":
        """Drop injected tokens; unknown names are ignored (rollback helper)."""
        drop = set(tokens)
        kept = {t: v for t, v in self.injected.items() if t not in drop}
        return TokenDictionary(self.embed_dim, self.base, kept)

    def attach_base(self, base: Mapping[str, np.ndarray]) -> "TokenDictionary":
        """Bind a backend vocabulary to a dictionary restored from disk."""
        return TokenDictionary(self.embed_dim, base, dict(self.injected))

    # -- prompts -----------------------------------------------------------

    def compose_prompt(self, template: str, tokens: Sequence[str]) -> str:
        """Fill template slots positionally with resolvable tokens.

        Slot names in the template are documentation only; the i-th slot
        receives the i-th token. Slot count and token count must agree.
        """
        slots = [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]
        if len(slots) != len(tokens):
            raise TemplateArityError(
                f"template has {len(slots)} slots but {len(tokens)} tokens were given"
            )
        for token in tokens:
            if self.resolve(token) is None:
                raise UnknownWordError(f"token {token!r} does not resolve")
        out = template
        for slot, token in zip(slots, tokens):
            out = out.replace("{" + slot + "}", token, 1)
        return out
