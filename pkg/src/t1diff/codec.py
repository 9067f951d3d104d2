"""Patchify views into token grids and back.

Stands in for a pretrained latent autoencoder: each ``patch x patch`` block of
pixels becomes one token. In raw mode the projection has orthonormal columns,
so decoding is an exact left inverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import View


@dataclass(frozen=True)
class PatchCodecConfig:
    patch: int = 16
    signal_dim: int = 3
    mode: str = "raw"
    token_dim: int | None = None  # defaults to patch*patch*signal_dim
    seed: int = 0

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.signal_dim

    @property
    def out_dim(self) -> int:
        return self.patch_dim if self.token_dim is None else self.token_dim


def patchify(pixels: np.ndarray, patch: int) -> np.ndarray:
    """HxWxC -> (H/p * W/p, p*p*C), patches row-major, each flattened (row, col, channel)."""
    h, w, c = pixels.shape
    for label, extent in (("height", h), ("width", w)):
        if extent % patch:
            raise ValueError(f"view {label} {extent} is not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = pixels.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(gh * gw, patch * patch * c)


def unpatchify(patches: np.ndarray, patch: int, height: int, width: int, channels: int) -> np.ndarray:
    gh, gw = height // patch, width // patch
    if patches.shape[0] != gh * gw:
        raise ValueError(f"expected {gh * gw} tokens for a {height}x{width} view, got {patches.shape[0]}")
    x = patches.reshape(gh, gw, patch, patch, channels).transpose(0, 2, 1, 3, 4)
    return x.reshape(height, width, channels)


class PatchCodec:
    """Encode/decode views with a fixed (raw) or trainable (learned) projection."""

    def __init__(self, cfg: PatchCodecConfig = PatchCodecConfig()):
        if cfg.mode not in ("raw", "learned"):
            raise ValueError(f"unknown codec mode {cfg.mode!r}")
        if cfg.mode == "raw" and cfg.out_dim < cfg.patch_dim:
            raise ValueError(
                f"raw mode needs token_dim >= patch_dim ({cfg.patch_dim}) for an exact inverse, "
                f"got {cfg.out_dim}")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        g = rng.standard_normal((max(cfg.out_dim, cfg.patch_dim), cfg.patch_dim))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))  # unique QR
        # encode: tokens = patches @ proj, proj is patch_dim x out_dim
        self.proj = q[:cfg.out_dim, :].T.copy() if cfg.out_dim >= cfg.patch_dim else q[:, :cfg.out_dim]

    @property
    def token_dim(self) -> int:
        return self.cfg.out_dim

    def grid_shape(self, height: int, width: int) -> tuple[int, int]:
        return height // self.cfg.patch, width // self.cfg.patch

    def encode_pixels(self, pixels: np.ndarray) -> np.ndarray:
        return patchify(pixels, self.cfg.patch) @ self.proj

    def decode_pixels(self, tokens: np.ndarray, height: int, width: int) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.shape[-1] != self.token_dim:
            raise ValueError(f"token_dim mismatch: expected {self.token_dim}, got {tokens.shape[-1]}")
        return unpatchify(tokens @ self.proj.T, self.cfg.patch, height, width, self.cfg.signal_dim)

    def encode_view(self, view: View) -> np.ndarray:
        if view.channels != self.cfg.signal_dim:
            raise ValueError(f"view has {view.channels} channels, codec expects {self.cfg.signal_dim}")
        return self.encode_pixels(view.pixels)

    def decode_view(self, tokens: np.ndarray, height: int, width: int, view_coord=()) -> View:
        return View(self.decode_pixels(tokens, height, width), view_coord)

    def token_to_patch(self, x: np.ndarray) -> np.ndarray:
        """Map token-space vectors to flattened patch space (linear, exact in raw mode)."""
        return x @ self.proj.T

    def patch_to_token(self, x: np.ndarray) -> np.ndarray:
        return x @ self.proj

    def color_channel_mask(self, num_color: int = 3) -> np.ndarray:
        """Patch-space mask selecting entries whose colour index is < ``num_color``."""
        c = np.arange(self.cfg.patch_dim) % self.cfg.signal_dim
        return c < num_color
