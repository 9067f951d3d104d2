"""Analytic MAC and activation-memory accounting for the score network.

MACs are multiply-accumulates (half of FLOPs). Per transformer block over
N tokens of width D:

    qkv 3*N*D^2, attention 2*D*sum_g N_g^2, output projection N*D^2,
    MLP 2*r*N*D^2 (r = mlp_ratio)

where the attention groups g are the views (view-local) or one group of all
tokens (global).
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .scorenet import ScoreNetConfig

CSV_COLUMNS = ["depth", "width", "heads", "Z", "n_views", "view_local", "text", "macs", "act_mem", "params"]
CORE_KEYS = ("qkv", "attention", "projection", "mlp")


@dataclass
class CostReport:
    macs: int
    activation_mem: int
    breakdown: dict = field(default_factory=dict)
    params: int = 0
    n_views: int = 1

    @property
    def core_macs(self) -> int:
        return sum(self.breakdown[k] for k in CORE_KEYS)

    @property
    def macs_per_view(self) -> float:
        return self.macs / self.n_views


@dataclass
class MemoryReport:
    total: int
    params: int
    activations: int
    attention_scores: int
    breakdown: dict = field(default_factory=dict)


def _groups(z: int, n_views: int, view_local: bool) -> list[int]:
    if z < 1 or n_views < 1:
        raise ValueError("tokens per view and n_views must be positive")
    return [z] * n_views if view_local else [z * n_views]


def parameter_count(cfg: ScoreNetConfig) -> int:
    """Closed-form parameter count of :class:`~t1diff.scorenet.ScoreNet`."""
    d, td = cfg.width, cfg.token_dim
    hid = cfg.mlp_ratio * d
    m = cfg.mod_chunks
    total = (td + cfg.coord_dim) * d + d
    total += cfg.time_dim * d + d + d * d + d
    total += cfg.cond_dim * d + d
    total += cfg.cond_tokens * cfg.cond_dim
    per_block = (3 * d * d + 3 * d) + (d * d + d) + (d * hid + hid) + (hid * d + d) + (d * m * d + m * d)
    total += cfg.depth * per_block
    total += d * 2 * d + 2 * d
    total += d * td + td
    return total


def estimate_macs(cfg: ScoreNetConfig, tokens_per_view: int, n_views: int = 1,
                  view_local: bool = True, text_cond: bool = True,
                  bytes_per_scalar: int = 4) -> CostReport:
    """MACs of one forward pass over ``n_views`` views of ``tokens_per_view`` tokens."""
    d, depth = cfg.width, cfg.depth
    n = tokens_per_view * n_views
    groups = _groups(tokens_per_view, n_views, view_local)
    b = {
        "qkv": depth * 3 * n * d * d,
        "attention": depth * 2 * d * sum(g * g for g in groups),
        "projection": depth * n * d * d,
        "mlp": depth * 2 * cfg.mlp_ratio * n * d * d,
        "embed": n * (cfg.token_dim + cfg.coord_dim) * d + n * d * cfg.token_dim,
        "conditioning": cfg.time_dim * d + d * d,
    }
    if text_cond:
        b["conditioning"] += cfg.cond_tokens * cfg.cond_dim * d + depth * cfg.mod_chunks * d * d + 2 * d * d
    mem = estimate_memory(cfg, tokens_per_view, n_views, view_local, bytes_per_scalar)
    return CostReport(macs=int(sum(b.values())), activation_mem=mem.activations + mem.attention_scores,
                      breakdown=b, params=parameter_count(cfg), n_views=n_views)


def estimate_memory(cfg: ScoreNetConfig, tokens_per_view: int, n_views: int = 1,
                    view_local: bool = True, bytes_per_scalar: int = 4) -> MemoryReport:
    """Peak bytes for parameters plus stored activations (no checkpointing).

    Each block keeps, per token, the two normalized inputs, q/k/v, the
    attention output, its projection, the MLP hidden pre- and post-activation
    and the MLP output: (8 + 2r) * D scalars. Attention probabilities add
    heads * N_g^2 per group.
    """
    d = cfg.width
    n = tokens_per_view * n_views
    groups = _groups(tokens_per_view, n_views, view_local)
    scores = cfg.depth * cfg.heads * sum(g * g for g in groups)
    per_token = cfg.depth * (8 + 2 * cfg.mlp_ratio) * d + (cfg.token_dim + cfg.coord_dim) + d + cfg.token_dim
    acts = n * per_token
    params = parameter_count(cfg)
    bps = bytes_per_scalar
    b = {"params": params * bps, "activations": acts * bps, "attention_scores": scores * bps}
    return MemoryReport(total=sum(b.values()), params=params * bps, activations=acts * bps,
                        attention_scores=scores * bps, breakdown=b)


def sweep(base: ScoreNetConfig, depths=None, widths=None, heads=None, tokens=(256,), views=(1,),
          view_local=(True,), text=(True,), accounting: str = "field", csv_path=None,
          chart_path=None) -> list[dict]:
    """Cross-product sweep. ``accounting="view"`` divides MACs/activations by n_views."""
    if accounting not in ("field", "view"):
        raise ValueError("accounting must be 'field' or 'view'")
    axes = [depths or (base.depth,), widths or (base.width,), heads or (base.heads,),
            tokens, views, view_local, text]
    if any(len(a) == 0 for a in axes):
        raise ValueError("sweep ranges must be nonempty")
    rows = []
    for dep, wid, hd, z, nv, vl, tx in itertools.product(*axes):
        cfg = replace(base, depth=dep, width=wid, heads=hd)
        rep = estimate_macs(cfg, z, nv, vl, tx)
        div = nv if accounting == "view" else 1
        rows.append({"depth": dep, "width": wid, "heads": hd, "Z": z, "n_views": nv,
                     "view_local": int(vl), "text": int(tx), "macs": rep.macs // div,
                     "act_mem": rep.activation_mem // div, "params": rep.params})
    if csv_path is not None:
        write_csv(csv_path, rows)
    if chart_path is not None:
        bar_chart(chart_path, [r["macs"] for r in rows])
    return rows


def write_csv(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: int(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def bar_chart(path, values, height: int = 120, bar: int = 12, gap: int = 4) -> None:
    """Minimal PPM bar chart, bars scaled to the largest value."""
    from .io import write_pnm

    vals = np.asarray(values, dtype=float)
    width = max(1, len(vals) * (bar + gap) + gap)
    img = np.full((height, width, 3), 255, np.uint8)
    top = vals.max() if vals.size and vals.max() > 0 else 1.0
    for i, v in enumerate(vals):
        h = int(round((height - 4) * v / top))
        x0 = gap + i * (bar + gap)
        img[height - h:, x0:x0 + bar] = (40, 90, 200)
    write_pnm(path, img)
