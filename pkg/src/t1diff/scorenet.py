"""Decoder-only transformer score network with adaLN conditioning.

Tokens of all views of a field travel together as [B, n_views, Z, token_dim];
self-attention is restricted to tokens of the same view, while the timestep
and condition modulation is shared by every view of a field.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .field import TIMESTEP_DIM, embed_timestep


@dataclass(frozen=True)
class ScoreNetConfig:
    depth: int = 4
    width: int = 128
    heads: int = 4
    mlp_ratio: int = 4
    token_dim: int = 48
    coord_dim: int = 60
    cond_dim: int = 64
    cond_tokens: int = 16
    time_dim: int = TIMESTEP_DIM
    adaln_zero: bool = True
    view_local: bool = True
    max_tokens: int = 1 << 16

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def mod_chunks(self) -> int:
        return 6 if self.adaln_zero else 4

    @classmethod
    def dit_xl(cls, **kw) -> "ScoreNetConfig":
        """DiT-XL sized network with 256 text tokens of T5-XXL width."""
        base = dict(depth=28, width=1152, heads=16, token_dim=1152, cond_dim=4096, cond_tokens=256)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# conditioning pieces
# ----------------------------------------------------------------------------

def modulate(x: nx.Tensor, shift: nx.Tensor, scale: nx.Tensor) -> nx.Tensor:
    """(1 + scale) * x + shift, with [B, W] parameters shared along x's token axis."""
    length = x.shape[1]
    return nx.add(nx.mul(x, nx.add_scalar(nx.broadcast_rows(scale, length), 1.0)),
                  nx.broadcast_rows(shift, length))


def ada_layer_norm(features, gamma, beta) -> nx.Tensor:
    """LayerNorm over channels, then ``(1 + gamma) * normed + beta``.

    ``features`` is [Z, W] (one view) or [B, L, W]; gamma/beta are [W] or [B, W].
    """
    f = nx.as_tensor(features)
    g, b = nx.as_tensor(gamma), nx.as_tensor(beta)
    if f.shape[-1] != g.shape[-1] or f.shape[-1] != b.shape[-1]:
        raise ValueError(f"channel mismatch: features {f.shape}, gamma {g.shape}, beta {b.shape}")
    squeeze = f.ndim == 2
    if squeeze:
        f = nx.reshape(f, (1,) + f.shape)
    if g.ndim == 1:
        g = nx.reshape(g, (1, g.shape[0]))
        b = nx.reshape(b, (1, b.shape[0]))
    out = modulate(nx.layer_norm(f), b, g)
    return nx.reshape(out, out.shape[1:]) if squeeze else out


# ----------------------------------------------------------------------------
# network
# ----------------------------------------------------------------------------

def _xavier(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class ScoreNet:
    """Noise predictor eps_theta(tokens, coords, t, condition)."""

    def __init__(self, cfg: ScoreNetConfig, seed: int = 0):
        self.cfg = cfg
        self.params: "OrderedDict[str, nx.Tensor]" = OrderedDict()
        self.attn_score_elements = 0
        rng = np.random.default_rng(seed)
        c = cfg
        w = c.width

        def add(name, arr):
            self.params[name] = nx.Tensor(np.asarray(arr, dtype=nx.get_dtype()), requires_grad=True, name=name)

        add("in.w", _xavier(rng, c.token_dim + c.coord_dim, w))
        add("in.b", np.zeros(w))
        add("time.w1", rng.normal(0, 0.02, (c.time_dim, w)))
        add("time.b1", np.zeros(w))
        add("time.w2", rng.normal(0, 0.02, (w, w)))
        add("time.b2", np.zeros(w))
        add("cond.w", _xavier(rng, c.cond_dim, w))
        add("cond.b", np.zeros(w))
        add("null_cond", np.zeros((c.cond_tokens, c.cond_dim)))
        hid = c.mlp_ratio * w
        for i in range(c.depth):
            p = f"blocks.{i}."
            add(p + "qkv.w", _xavier(rng, w, 3 * w))
            add(p + "qkv.b", np.zeros(3 * w))
            add(p + "proj.w", _xavier(rng, w, w))
            add(p + "proj.b", np.zeros(w))
            add(p + "fc1.w", _xavier(rng, w, hid))
            add(p + "fc1.b", np.zeros(hid))
            add(p + "fc2.w", _xavier(rng, hid, w))
            add(p + "fc2.b", np.zeros(w))
            add(p + "ada.w", np.zeros((w, c.mod_chunks * w)))
            add(p + "ada.b", np.zeros(c.mod_chunks * w))
        add("final.ada.w", np.zeros((w, 2 * w)))
        add("final.ada.b", np.zeros(2 * w))
        add("final.w", np.zeros((w, c.token_dim)))
        add("final.b", np.zeros(c.token_dim))

    # -- parameter helpers ------------------------------------------------
    def parameters(self) -> list[nx.Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise KeyError(f"missing parameter {k}")
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def astype(self, dtype) -> "ScoreNet":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    # -- submodules -------------------------------------------------------
    def timestep_mlp(self, t_embed) -> nx.Tensor:
        """Two linear layers with SiLU between: [B, 256] -> [B, width]."""
        p = self.params
        h = nx.silu(nx.linear(nx.as_tensor(t_embed), p["time.w1"], p["time.b1"]))
        return nx.linear(h, p["time.w2"], p["time.b2"])

    def pool_condition(self, cond, drop_mask=None) -> nx.Tensor:
        """Mean-pool [B, Zc, cond_dim] condition tokens; dropped rows use the null embedding."""
        cond = nx.as_tensor(cond)
        pooled = nx.mean(cond, axis=1)
        if drop_mask is None or not np.any(drop_mask):
            return pooled
        bsz = pooled.shape[0]
        null = nx.mean(self.params["null_cond"], axis=0)
        null_b = nx.reshape(nx.broadcast_rows(nx.reshape(null, (1, -1)), bsz), (bsz, -1))
        if pooled.data.dtype != null_b.data.dtype:
            pooled = nx.Tensor(pooled.data.astype(null_b.data.dtype))
        mask = np.asarray(drop_mask, dtype=bool)[:, None]
        return nx.where(mask, null_b, pooled)

    def condition_vector(self, t, cond, drop_mask=None) -> nx.Tensor:
        """Shared per-field conditioning: SiLU(Linear(LN(pooled cond))) + timestep MLP.

        The parameter-free LayerNorm makes the path insensitive to the scale of
        the condition embeddings (unit-norm toy words vs. raw encoder outputs).
        """
        p = self.params
        pooled = nx.layer_norm(self.pool_condition(cond, drop_mask))
        c = nx.silu(nx.linear(pooled, p["cond.w"], p["cond.b"]))
        t_emb = embed_timestep(np.atleast_1d(t), self.cfg.time_dim).astype(p["time.w1"].data.dtype)
        return nx.add(c, self.timestep_mlp(t_emb))

    def condition_mlp(self, cond, t=None, drop_mask=None) -> list[dict]:
        """Per-block adaLN parameters regressed from the condition (and timestep)."""
        p = self.params
        cond = nx.as_tensor(cond)
        if t is None:
            t = np.zeros(cond.shape[0], dtype=np.int64)
        c = nx.silu(self.condition_vector(t, cond, drop_mask))
        return [self._chunks(nx.linear(c, p[f"blocks.{i}.ada.w"], p[f"blocks.{i}.ada.b"]))
                for i in range(self.cfg.depth)]

    def _chunks(self, mod: nx.Tensor) -> dict:
        w = self.cfg.width
        names = ["shift_msa", "scale_msa", "gate_msa", "shift_mlp", "scale_mlp", "gate_mlp"]
        if not self.cfg.adaln_zero:
            names = ["shift_msa", "scale_msa", "shift_mlp", "scale_mlp"]
        return {n: nx.slice_axis(mod, k * w, (k + 1) * w, axis=1) for k, n in enumerate(names)}

    def attention(self, h: nx.Tensor, i: int, n_views: int) -> nx.Tensor:
        """Multi-head self-attention over [B, n_views*Z, W]; groups are views if view_local."""
        c, p = self.cfg, self.params
        bsz, length, w = h.shape
        groups = bsz * n_views if c.view_local else bsz
        glen = length // (groups // bsz)
        qkv = nx.linear(h, p[f"blocks.{i}.qkv.w"], p[f"blocks.{i}.qkv.b"])
        qkv = nx.reshape(qkv, (groups, glen, 3, c.heads, c.head_dim))
        qkv = nx.transpose(qkv, (2, 0, 3, 1, 4))  # 3, G, H, L, dh
        shp = (groups, c.heads, glen, c.head_dim)
        q = nx.reshape(nx.slice_axis(qkv, 0, 1, axis=0), shp)
        k = nx.reshape(nx.slice_axis(qkv, 1, 2, axis=0), shp)
        v = nx.reshape(nx.slice_axis(qkv, 2, 3, axis=0), shp)
        scores = nx.scale(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(c.head_dim))
        self.attn_score_elements += scores.size
        att = nx.softmax(scores, axis=-1)
        out = nx.matmul(att, v)  # G, H, L, dh
        out = nx.reshape(nx.transpose(out, (0, 2, 1, 3)), (bsz, length, w))
        return nx.linear(out, p[f"blocks.{i}.proj.w"], p[f"blocks.{i}.proj.b"])

    def block(self, x: nx.Tensor, i: int, mod: dict, n_views: int) -> nx.Tensor:
        p = self.params
        h = modulate(nx.layer_norm(x), mod["shift_msa"], mod["scale_msa"])
        a = self.attention(h, i, n_views)
        if self.cfg.adaln_zero:
            a = nx.mul(nx.broadcast_rows(mod["gate_msa"], x.shape[1]), a)
        x = nx.add(x, a)
        h = modulate(nx.layer_norm(x), mod["shift_mlp"], mod["scale_mlp"])
        h = nx.gelu(nx.linear(h, p[f"blocks.{i}.fc1.w"], p[f"blocks.{i}.fc1.b"]))
        h = nx.linear(h, p[f"blocks.{i}.fc2.w"], p[f"blocks.{i}.fc2.b"])
        if self.cfg.adaln_zero:
            h = nx.mul(nx.broadcast_rows(mod["gate_mlp"], x.shape[1]), h)
        return nx.add(x, h)

    def forward(self, tokens, coord_embeds, t, cond, drop_mask=None) -> nx.Tensor:
        """Predict noise for tokens [B, n_views, Z, token_dim].

        ``coord_embeds`` is [B, n_views, Z, coord_dim]; ``t`` is [B] ints;
        ``cond`` is [B, Zc, cond_dim]; ``drop_mask`` marks fields whose
        condition is replaced by the null embedding.
        """
        c, p = self.cfg, self.params
        tokens = np.asarray(tokens)
        coord_embeds = np.asarray(coord_embeds)
        if tokens.ndim != 4 or tokens.shape[-1] != c.token_dim:
            raise ValueError(f"tokens must be [B, n_views, Z, {c.token_dim}], got {tokens.shape}")
        if coord_embeds.shape != tokens.shape[:3] + (c.coord_dim,):
            raise ValueError(f"coord_embeds shape {coord_embeds.shape} does not align with tokens {tokens.shape}")
        bsz, n_views, z, _ = tokens.shape
        if n_views * z > c.max_tokens:
            raise ValueError(f"{n_views * z} tokens per field exceeds max_tokens={c.max_tokens}")
        t = np.broadcast_to(np.asarray(t), (bsz,))
        dt = p["in.w"].data.dtype
        x_in = np.concatenate([tokens, coord_embeds], axis=-1).astype(dt, copy=False)
        x = nx.linear(nx.Tensor(x_in.reshape(bsz, n_views * z, -1)), p["in.w"], p["in.b"])
        cvec = nx.silu(self.condition_vector(t, nx.Tensor(np.asarray(cond, dtype=dt)), drop_mask))
        for i in range(c.depth):
            mod = self._chunks(nx.linear(cvec, p[f"blocks.{i}.ada.w"], p[f"blocks.{i}.ada.b"]))
            x = self.block(x, i, mod, n_views)
        fmod = nx.linear(cvec, p["final.ada.w"], p["final.ada.b"])
        shift = nx.slice_axis(fmod, 0, c.width, axis=1)
        scale = nx.slice_axis(fmod, c.width, 2 * c.width, axis=1)
        h = modulate(nx.layer_norm(x), shift, scale)
        out = nx.linear(h, p["final.w"], p["final.b"])
        return nx.reshape(out, (bsz, n_views, z, c.token_dim))

    __call__ = forward
