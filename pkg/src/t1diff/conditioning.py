"""Condition embeddings: toy text hashing, view statistics, null, and external files."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .field import View

SOURCES = ("text", "view", "null", "external")
MAX_TOKEN_NORM = 10.0


@dataclass(frozen=True)
class ConditionEmbedding:
    tokens: np.ndarray  # Zc x cond_dim
    source_tag: str

    def __post_init__(self):
        if self.source_tag not in SOURCES:
            raise ValueError(f"unknown source_tag {self.source_tag!r}")
        if self.tokens.ndim != 2:
            raise ValueError(f"condition tokens must be Zc x cond_dim, got {self.tokens.shape}")
        if not np.isfinite(self.tokens).all():
            raise ValueError("condition embedding contains non-finite values")
        norms = np.linalg.norm(self.tokens, axis=1)
        if norms.size and norms.max() > MAX_TOKEN_NORM:
            raise ValueError(f"condition token norm {norms.max():.3f} exceeds {MAX_TOKEN_NORM}")

    @property
    def shape(self) -> tuple:
        return self.tokens.shape


def _word_seed(word: str, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}\x00{word}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def word_vector(word: str, cond_dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm Gaussian direction keyed by a hash of (seed, word)."""
    v = np.random.default_rng(_word_seed(word, seed)).standard_normal(cond_dim)
    return v / np.linalg.norm(v)


def embed_text_toy(caption: str, cond_tokens: int = 16, cond_dim: int = 64,
                   seed: int = 0) -> ConditionEmbedding:
    words = caption.lower().split()
    if not words:
        raise ValueError("caption is empty")
    vecs = [word_vector(w, cond_dim, seed) for w in words]
    rows = [vecs[i % len(vecs)] for i in range(cond_tokens)]
    return ConditionEmbedding(np.stack(rows), "text")


def _view_projection(in_dim: int, cond_dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, in_dim, cond_dim, 0x7669])
    return rng.standard_normal((in_dim, cond_dim)) / np.sqrt(in_dim)


def embed_view(view: View, cond_dim: int = 64, patch: int = 16, seed: int = 0) -> ConditionEmbedding:
    """Zc=1 embedding from per-patch colour mean/std, projected by a fixed map.

    The patch size is clipped to the view so small views still work.
    """
    px = view.pixels
    h, w, ch = px.shape
    ph, pw = min(patch, h), min(patch, w)
    gh, gw = h // ph, w // pw
    x = px[:gh * ph, :gw * pw].reshape(gh, ph, gw, pw, ch)
    stats = np.concatenate([x.mean(axis=(1, 3)).ravel(), x.std(axis=(1, 3)).ravel()])
    vec = stats @ _view_projection(stats.size, cond_dim, seed)
    norm = np.linalg.norm(vec)
    if norm > MAX_TOKEN_NORM:
        vec = vec * (MAX_TOKEN_NORM / norm)
    return ConditionEmbedding(vec[None, :], "view")


class NullCondition:
    """The learned unconditional embedding used for guidance.

    The score network owns the parameter tensor; this wrapper exposes it as a
    :class:`ConditionEmbedding` tagged ``null``.
    """

    def __init__(self, param):
        self.param = param

    def embedding(self) -> ConditionEmbedding:
        return ConditionEmbedding(np.asarray(self.param.data, dtype=np.float64), "null")


def null_condition(cond_tokens: int, cond_dim: int, net=None) -> ConditionEmbedding:
    """Null embedding: the net's learned matrix if given, else the zero init."""
    if net is not None:
        return NullCondition(net.params["null_cond"]).embedding()
    return ConditionEmbedding(np.zeros((cond_tokens, cond_dim)), "null")


def save_embedding(path, emb: ConditionEmbedding) -> None:
    from .io import write_tensor_file

    write_tensor_file(path, {"condition": emb.tokens}, config_text=f"source_tag = {emb.source_tag}\n")


def load_external_embeddings(path, cond_tokens: int | None = None,
                             cond_dim: int | None = None) -> ConditionEmbedding:
    """Load a Zc x cond_dim matrix from the tensor container format."""
    from .io import read_tensor_file

    _, tensors = read_tensor_file(path)
    if "condition" in tensors:
        arr = tensors["condition"]
    elif len(tensors) == 1:
        arr = next(iter(tensors.values()))
    else:
        raise ValueError(f"{path}: expected a single 'condition' tensor, found {list(tensors)}")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{path}: condition tensor must be rank 2, got shape {arr.shape}")
    if cond_tokens is not None and arr.shape[0] != cond_tokens:
        raise ValueError(f"{path}: expected {cond_tokens} condition tokens, got {arr.shape[0]}")
    if cond_dim is not None and arr.shape[1] != cond_dim:
        raise ValueError(f"{path}: expected cond_dim {cond_dim}, got {arr.shape[1]}")
    return ConditionEmbedding(arr, "external")
