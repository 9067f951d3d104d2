"""Desk-scale evaluation proxies: reconstruction PSNR, motion coherence, condition accuracy.

None of these are FID/FVD/CLIPSIM; they are cheap, self-contained stand-ins
that need no pretrained feature extractor.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .diffusion import NoiseSchedule, sample_field
from .field import FieldSample, View
from .training import text_embedder, view_coord_embeddings

PEAK = 2.0  # signal range of [-1, 1] data


def psnr(mse: float, peak: float = PEAK) -> float:
    if mse <= 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass
class EvalReport:
    mse: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    coherence: float | None = None
    condition_accuracy: float | None = None

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse))

    @property
    def mean_psnr(self) -> float:
        """PSNR of the mean MSE over fields."""
        return psnr(self.mean_mse)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["field", "mse", "psnr"])
            for i, (m, p) in enumerate(zip(self.mse, self.psnr)):
                w.writerow([i, repr(m), repr(p)])
            w.writerow(["mean", repr(self.mean_mse), repr(self.mean_psnr)])


def timestep_for_alpha_bar(sched: NoiseSchedule, target: float = 0.5) -> int:
    return int(np.argmin(np.abs(sched.alpha_bar[1:] - target))) + 1


def reconstruction_eval(net, fields: Sequence[FieldSample], sched: NoiseSchedule, codec,
                        embedder: Callable | None = None, t: int | None = None, seed: int = 0,
                        num_freqs: int = 10) -> EvalReport:
    """One forward-diffuse / denoise cycle per field at a fixed t, scored by pixel MSE/PSNR."""
    embedder = embedder or text_embedder(net.cfg.cond_tokens, net.cfg.cond_dim)
    t = timestep_for_alpha_bar(sched) if t is None else t
    sched.check_t(t)
    ab = sched.alpha_bar[t]
    rng = np.random.default_rng([seed, 0xEA])
    dt = net.params["in.w"].data.dtype
    rep = EvalReport()
    with nx.no_grad():
        for fld in fields:
            idx = np.arange(len(fld.views))
            clean = np.stack([codec.encode_view(v) for v in fld.views])
            noise = rng.standard_normal(clean.shape[1:])
            noisy = np.sqrt(ab) * clean + np.sqrt(1 - ab) * noise[None]
            coords = view_coord_embeddings(fld, idx, codec, num_freqs)
            cond = embedder(fld).tokens
            eps = net(noisy[None].astype(dt), coords[None].astype(dt), np.array([t]), cond[None]).data[0]
            y0 = (noisy - np.sqrt(1 - ab) * eps.astype(np.float64)) / np.sqrt(ab)
            err = [np.mean((codec.decode_pixels(y0[i], fld.spec.height, fld.spec.width) - v.pixels) ** 2)
                   for i, v in enumerate(fld.views)]
            m = float(np.mean(err))
            rep.mse.append(m)
            rep.psnr.append(psnr(m))
    return rep


# ----------------------------------------------------------------------------
# coherence
# ----------------------------------------------------------------------------

def object_centroid(view, threshold: float = 0.0):
    px = view.pixels if isinstance(view, View) else np.asarray(view)
    mask = px.max(axis=2) > threshold
    if not mask.any():
        return None
    rows, cols = np.nonzero(mask)
    return np.array([rows.mean(), cols.mean()])


def coherence_score(views: Sequence, threshold: float = 0.0) -> float:
    """Spread (RMS deviation) of frame-to-frame centroid displacements; lower is better.

    Returns +inf if any view has an empty object mask.
    """
    if len(views) < 3:
        raise ValueError("coherence_score needs at least 3 views")
    cents = [object_centroid(v, threshold) for v in views]
    if any(c is None for c in cents):
        return math.inf
    disp = np.diff(np.stack(cents), axis=0)
    return float(np.sqrt(np.mean(np.sum((disp - disp.mean(axis=0)) ** 2, axis=1))))


# ----------------------------------------------------------------------------
# condition accuracy
# ----------------------------------------------------------------------------

def color_statistic(views: Sequence, threshold: float = 0.0) -> np.ndarray:
    """Mean colour of foreground pixels over all views (all pixels if none)."""
    px = np.stack([v.pixels if isinstance(v, View) else np.asarray(v) for v in views])
    fg = px.max(axis=-1) > threshold
    if fg.any():
        return px[fg].mean(axis=0)
    return px.reshape(-1, px.shape[-1]).mean(axis=0)


def class_centroids(classes: Sequence[tuple[str, Sequence[FieldSample]]]) -> np.ndarray:
    return np.stack([np.mean([color_statistic(f.views) for f in flds], axis=0) for _, flds in classes])


def nearest_class(stat: np.ndarray, centroids: np.ndarray) -> int:
    return int(np.argmin(np.sum((centroids - stat) ** 2, axis=1)))


def classify(samples: Sequence[Sequence], centroids: np.ndarray) -> list[int]:
    return [nearest_class(color_statistic(s), centroids) for s in samples]


def condition_accuracy(generate: Callable, classes: Sequence[tuple[str, Sequence[FieldSample]]],
                       samples_per_class: int, seed: int = 0) -> float:
    """Fraction of generated samples whose nearest training-class centroid is their own class.

    ``generate(captions, seed)`` returns one list of views per caption.
    """
    if len(classes) < 2:
        raise ValueError("condition_accuracy needs at least 2 classes")
    cents = class_centroids(classes)
    captions = [cap for cap, _ in classes for _ in range(samples_per_class)]
    labels = [k for k in range(len(classes)) for _ in range(samples_per_class)]
    samples = generate(captions, seed)
    pred = classify(samples, cents)
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


def make_generator(net, sched: NoiseSchedule, codec, spec, n_views: int, guidance: float = 8.5,
                   channel_mask: str = "pixel", embed_seed: int = 0, chunk: int = 32) -> Callable:
    """Caption-driven sampler suitable for :func:`condition_accuracy`."""
    embed = text_embedder(net.cfg.cond_tokens, net.cfg.cond_dim, embed_seed)

    def generate(captions: Sequence[str], seed: int):
        rng = np.random.default_rng([seed, 0x5A])
        out = []
        for s in range(0, len(captions), chunk):
            conds = np.stack([embed(FieldSample(spec, [], c)).tokens for c in captions[s:s + chunk]])
            out.extend(sample_field(net, conds, spec, n_views, sched, guidance, rng, codec,
                                    channel_mask=channel_mask))
        return out

    return generate
