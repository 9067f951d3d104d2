"""Fields as coordinate-signal pairs: specs, views, and frequency embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

VALID_METRIC_DIMS = (2, 3, 6)
DEFAULT_NUM_FREQS = 10
TIMESTEP_DIM = 256


@dataclass(frozen=True)
class FieldSpec:
    metric_dim: int = 3
    signal_dim: int = 3
    height: int = 16
    width: int = 16
    num_views: int = 8

    def __post_init__(self):
        if self.metric_dim not in VALID_METRIC_DIMS:
            raise ValueError(f"metric_dim must be one of {VALID_METRIC_DIMS}, got {self.metric_dim}")
        if self.height < 1 or self.width < 1 or self.num_views < 1:
            raise ValueError("height, width and num_views must be positive")

    @property
    def view_coord_dim(self) -> int:
        return self.metric_dim - 2

    def check_patch(self, patch: int) -> None:
        for label, extent in (("height", self.height), ("width", self.width)):
            if extent % patch:
                raise ValueError(f"view {label} {extent} is not divisible by patch {patch}")


@dataclass(frozen=True)
class View:
    """One view of a field: an HxWxC pixel grid placed at ``view_coord``."""

    pixels: np.ndarray
    view_coord: tuple = ()

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise ValueError(f"pixels must be HxWxC, got shape {self.pixels.shape}")
        object.__setattr__(self, "view_coord", tuple(float(v) for v in self.view_coord))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass
class FieldSample:
    """A field as an ordered list of views plus its caption."""

    spec: FieldSpec
    views: list[View]
    caption: str = ""
    masks: list[np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, v in enumerate(self.views):
            if len(v.view_coord) != self.spec.view_coord_dim:
                raise ValueError(
                    f"view {i} has {len(v.view_coord)} view coordinates, "
                    f"expected {self.spec.view_coord_dim}")

    def __len__(self):
        return len(self.views)


def frame_coordinate(index: int, num_frames: int) -> float:
    return (index + 0.5) / num_frames


def grid_coordinates(spec: FieldSpec, token_rows: int, token_cols: int,
                     view_coord: Sequence[float] = ()) -> np.ndarray:
    """Row-major (token_rows*token_cols, metric_dim) coordinates in [0, 1].

    In-view components are half-pixel centred; view-level components are
    copied from ``view_coord``.
    """
    if token_rows < 1 or token_cols < 1:
        raise ValueError("token grid must be at least 1x1")
    view_coord = tuple(view_coord)
    if len(view_coord) != spec.view_coord_dim:
        raise ValueError(f"expected {spec.view_coord_dim} view coordinates, got {len(view_coord)}")
    rows = (np.arange(token_rows) + 0.5) / token_rows
    cols = (np.arange(token_cols) + 0.5) / token_cols
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = np.empty((token_rows * token_cols, spec.metric_dim))
    out[:, 0] = rr.ravel()
    out[:, 1] = cc.ravel()
    if view_coord:
        out[:, 2:] = np.asarray(view_coord, dtype=np.float64)
    return out


def embed_coordinates(m, num_freqs: int = DEFAULT_NUM_FREQS) -> np.ndarray:
    """NeRF-style sin/cos bands ``2^j * pi`` per axis.

    Accepts a single d_m-vector or an (N, d_m) array; output length per point
    is ``d_m * 2 * num_freqs``, laid out axis by axis as [sin bands, cos bands].
    """
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 1
    m2 = m[None, :] if single else m
    bands = (2.0 ** np.arange(num_freqs)) * np.pi
    ang = m2[:, :, None] * bands  # N, d, F
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    emb = emb.reshape(m2.shape[0], -1)
    return emb[0] if single else emb


def embed_timestep(t, dim: int = TIMESTEP_DIM, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal timestep embedding: [sin(t*f_k)..., cos(t*f_k)...].

    Frequencies ``f_k = max_period ** (-k / (dim/2))`` start at 1. Accepts a
    scalar or 1-D array of timesteps.
    """
    if dim % 2:
        raise ValueError(f"timestep embedding dim must be even, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    single = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    ang = t_arr[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    return emb[0] if single else emb


def camera_coordinate(azimuth: float, elevation: float, radius: float, focal: float,
                      max_radius: float = 8.0, max_focal: float = 4.0) -> tuple:
    """View coordinate of a camera, every component mapped into [0, 1].

    Layout: (azimuth/2pi, (elevation+pi/2)/pi, radius/max_radius,
    focal/max_focal). The principal point is taken to be the image centre, so
    together with the two in-view axes a camera field has metric_dim 6.
    """
    az = (azimuth % (2 * math.pi)) / (2 * math.pi)
    el = (elevation + math.pi / 2) / math.pi
    vals = (az, el, radius / max_radius, focal / max_focal)
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"camera coordinate component {v} outside [0, 1]")
    return vals
