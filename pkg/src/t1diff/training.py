"""View-wise batch construction with shared noise, and the optimization loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .codec import PatchCodec
from .conditioning import ConditionEmbedding, embed_text_toy
from .diffusion import NoiseSchedule, diffuse_exact, recover_noise, training_loss
from .field import FieldSample, FieldSpec, embed_coordinates, grid_coordinates
from .io import read_tensor_file, write_tensor_file
from .scorenet import ScoreNet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    n_views: int = 8
    batch_fields: int = 16
    lr: float = 1e-4
    steps: int = 2000
    cond_dropout: float = 0.1
    seed: int = 0
    checkpoint_every: int = 500
    num_freqs: int = 10


@dataclass
class ViewWiseBatch:
    view_idx: np.ndarray  # B x n
    clean: np.ndarray  # B x n x Z x D
    noise: np.ndarray  # B x Z x D, one draw per field
    t: np.ndarray  # B
    noisy: np.ndarray  # B x n x Z x D
    coords: np.ndarray  # B x n x Z x E
    cond: np.ndarray  # B x Zc x Dc
    drop: np.ndarray  # B bool; True -> null condition

    def recovered_noise(self, sched: NoiseSchedule) -> np.ndarray:
        return recover_noise(self.noisy, self.clean, sched.alpha_bar[self.t])


def step_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, step, stream); makes resumption exact."""
    return np.random.default_rng([seed, step, stream])


def sample_views(fld: FieldSample, n_views: int, rng: np.random.Generator) -> np.ndarray:
    """n distinct view indices, uniform without replacement."""
    total = len(fld.views)
    if not 1 <= n_views <= total:
        raise ValueError(f"cannot sample {n_views} views from a field with {total}")
    return rng.choice(total, size=n_views, replace=False)


@lru_cache(maxsize=4096)
def _coord_embed_cached(spec: FieldSpec, rows: int, cols: int, view_coord: tuple, num_freqs: int):
    emb = embed_coordinates(grid_coordinates(spec, rows, cols, view_coord), num_freqs)
    emb.flags.writeable = False
    return emb


def view_coord_embeddings(fld: FieldSample, idx, codec: PatchCodec, num_freqs: int = 10) -> np.ndarray:
    rows, cols = codec.grid_shape(fld.spec.height, fld.spec.width)
    return np.stack([_coord_embed_cached(fld.spec, rows, cols, fld.views[i].view_coord, num_freqs)
                     for i in idx])


def text_embedder(cond_tokens: int = 16, cond_dim: int = 64, seed: int = 0) -> Callable:
    cache: dict[str, ConditionEmbedding] = {}

    def embed(fld: FieldSample) -> ConditionEmbedding:
        if fld.caption not in cache:
            cache[fld.caption] = embed_text_toy(fld.caption, cond_tokens, cond_dim, seed)
        return cache[fld.caption]

    return embed


def build_batch(fields: Sequence[FieldSample], cfg: TrainConfig, sched: NoiseSchedule,
                codec: PatchCodec, embedder: Callable, rng: np.random.Generator) -> ViewWiseBatch:
    """Sample views per field, encode them, and noise them with one shared draw and t."""
    if not fields:
        raise ValueError("build_batch needs at least one field")
    idx, clean, coords, conds = [], [], [], []
    for fld in fields:
        vi = sample_views(fld, cfg.n_views, rng)
        idx.append(vi)
        clean.append(np.stack([codec.encode_view(fld.views[i]) for i in vi]))
        coords.append(view_coord_embeddings(fld, vi, codec, cfg.num_freqs))
        conds.append(embedder(fld).tokens)
    clean = np.stack(clean)
    b = len(fields)
    t = rng.integers(1, sched.num_steps + 1, size=b)
    noise = rng.standard_normal((b,) + clean.shape[2:])
    ab = sched.alpha_bar[t][:, None, None, None]
    noisy, noise = diffuse_exact(clean, noise[:, None], ab)
    noise = noise[:, 0]
    drop = rng.random(b) < cfg.cond_dropout
    return ViewWiseBatch(np.stack(idx), clean, noise, t, noisy, np.stack(coords),
                         np.stack(conds), drop)


def train_step(net: ScoreNet, batch: ViewWiseBatch, opt: nx.Adam) -> float:
    """Forward, loss, backward, Adam update. Returns the pre-update loss."""
    dt = net.params["in.w"].data.dtype
    opt.zero_grad()
    eps_pred = net(batch.noisy.astype(dt), batch.coords.astype(dt), batch.t, batch.cond, batch.drop)
    loss = training_loss(eps_pred, batch.noise.astype(dt))
    value = float(loss.data)
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite training loss {value} at t={batch.t.tolist()}")
    nx.backward(loss, net.parameters())
    opt.step()
    return value


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

def checkpoint_tensors(net: ScoreNet, opt: nx.Adam | None, step: int) -> dict:
    tensors = dict(net.state_dict())
    if opt is not None:
        for name, m, v in zip(net.params, opt.m, opt.v):
            tensors["adam.m." + name] = m
            tensors["adam.v." + name] = v
        tensors["adam.t"] = np.array([opt.t], dtype=np.float64)
    tensors["train.step"] = np.array([step], dtype=np.float64)
    return tensors


def save_checkpoint(path, net: ScoreNet, opt: nx.Adam | None, step: int, config_text: str) -> None:
    write_tensor_file(path, checkpoint_tensors(net, opt, step), config_text)


def load_checkpoint(path, net: ScoreNet, opt: nx.Adam | None = None) -> int:
    """Restore parameters (and optimizer state if given); returns the saved step."""
    _, tensors = read_tensor_file(path)
    net.load_state_dict(tensors)
    if opt is not None:
        for i, name in enumerate(net.params):
            opt.m[i] = tensors["adam.m." + name].astype(opt.m[i].dtype)
            opt.v[i] = tensors["adam.v." + name].astype(opt.v[i].dtype)
        opt.t = int(tensors["adam.t"][0])
    return int(tensors["train.step"][0])


# ----------------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------------

@dataclass
class FitResult:
    losses: list = field(default_factory=list)
    checkpoint: Path | None = None
    loss_csv: Path | None = None
    start_step: int = 0


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return step_rng(seed, epoch, stream=0xE).permutation(n)


def batch_indices(n: int, batch: int, seed: int, step: int) -> list[int]:
    """Indices for ``step`` in an endless stream of seeded per-epoch shuffles."""
    out = []
    cache: dict[int, np.ndarray] = {}
    for pos in range(step * batch, (step + 1) * batch):
        ep = pos // n
        if ep not in cache:
            cache[ep] = epoch_order(n, seed, ep)
        out.append(int(cache[ep][pos % n]))
    return out


def fit(net: ScoreNet, dataset: Sequence[FieldSample], cfg: TrainConfig, sched: NoiseSchedule,
        codec: PatchCodec, embedder: Callable | None = None, out_dir=None,
        config_text: str = "", resume: bool = False, stop_at: int | None = None,
        progress: Callable | None = None) -> FitResult:
    """Run ``cfg.steps`` optimizer steps, writing checkpoints and ``loss.csv`` to ``out_dir``.

    ``stop_at`` ends early (for interrupted-run tests); ``resume`` continues
    from ``out_dir/checkpoint.t1cp``.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    embedder = embedder or text_embedder()
    opt = nx.Adam(net.parameters(), lr=cfg.lr)
    res = FitResult()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        res.checkpoint = out / "checkpoint.t1cp"
        res.loss_csv = out / "loss.csv"
    start = 0
    prior_rows: list = []
    if resume:
        if res.checkpoint is None or not res.checkpoint.exists():
            raise FileNotFoundError(f"no checkpoint to resume from in {out}")
        start = load_checkpoint(res.checkpoint, net, opt)
        if res.loss_csv.exists():
            with res.loss_csv.open(newline="") as fh:
                prior_rows = [r for r in csv.DictReader(fh) if int(r["step"]) < start]
    res.start_step = start
    end = cfg.steps if stop_at is None else min(cfg.steps, stop_at)
    fh = writer = None
    if res.loss_csv is not None:
        fh = res.loss_csv.open("w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "lr", "seconds"])
        for r in prior_rows:
            writer.writerow([r["step"], r["loss"], r["lr"], r["seconds"]])
    t0 = time.perf_counter()
    try:
        for step in range(start, end):
            fields = [dataset[i] for i in batch_indices(n, cfg.batch_fields, cfg.seed, step)]
            batch = build_batch(fields, cfg, sched, codec, embedder, step_rng(cfg.seed, step, 1))
            loss = train_step(net, batch, opt)
            res.losses.append(loss)
            if writer is not None:
                writer.writerow([step, repr(loss), repr(cfg.lr), f"{time.perf_counter() - t0:.3f}"])
            if progress is not None:
                progress(step, loss)
            done = step + 1
            if res.checkpoint is not None and (done % cfg.checkpoint_every == 0 or done == end):
                save_checkpoint(res.checkpoint, net, opt, done, config_text)
                if fh is not None:
                    fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return res
