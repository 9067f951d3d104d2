"""Command-line entry point: ``t1diff {train,sample,cost,datagen,eval}``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .io import CheckpointError, ConfigError, read_tensor_file, to_uint8, write_image

log = logging.getLogger("t1diff")


def _thread_limit(strict: bool):
    """Cap BLAS threads: 1 in strict mode, else T1_THREADS if set."""
    limit = 1 if strict else os.environ.get("T1_THREADS")
    if limit is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(limit))


def _load_dataset(data: str, rc: RunConfig):
    from .datasets import ToyMultiViewSpec, gen_toy_views, ingest_manifest, toy_video_dataset

    d = rc["data"]
    if data == "toy":
        if d["kind"] == "views":
            return [gen_toy_views(ToyMultiViewSpec(size=d["height"], views=d["views"]), seed=s)
                    for s in range(4)]
        frames = 1 if d["kind"] == "image" else d["frames"]
        return toy_video_dataset(d["height"], d["width"], frames, d["square_size"])
    path = Path(data)
    if not path.exists():
        raise FileNotFoundError(f"data manifest not found: {path}")
    return list(ingest_manifest(path, metric_dim=rc.metric_dim))


def _load_checkpoint_net(path):
    from .training import load_checkpoint

    config_text, _ = read_tensor_file(path)
    rc = RunConfig.from_text(config_text, f"{path}:config")
    net = rc.build_net()
    load_checkpoint(path, net)
    return rc, net


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .training import TrainConfig, fit, text_embedder

    rc = RunConfig.load(args.config)
    tr = rc["train"]
    if args.steps is not None:
        tr["steps"] = args.steps
    if args.seed is not None:
        tr["seed"] = args.seed
        rc["model"]["seed"] = args.seed
    dataset = _load_dataset(args.data, rc)
    net = rc.build_net()
    cfg = TrainConfig(n_views=tr["n_views"], batch_fields=tr["batch_fields"], lr=tr["lr"],
                      steps=tr["steps"], cond_dropout=tr["cond_dropout"], seed=tr["seed"],
                      checkpoint_every=tr["checkpoint_every"], num_freqs=rc["field"]["num_freqs"])
    c = rc["cond"]
    embedder = text_embedder(c["cond_tokens"], c["cond_dim"], c["seed"])

    def progress(step, loss):
        if step % 100 == 0 or step == cfg.steps - 1:
            log.info("step %d loss %.5f", step, loss)

    with _thread_limit(args.strict_deterministic):
        res = fit(net, dataset, cfg, rc.schedule(), rc.codec(), embedder, out_dir=args.out,
                  config_text=rc.to_text(), resume=args.resume, progress=progress)
    if res.losses:
        print(f"trained steps {res.start_step}..{res.start_step + len(res.losses) - 1}; "
              f"final loss {res.losses[-1]:.5f}")
    print(f"checkpoint: {res.checkpoint}")
    print(f"loss curve: {res.loss_csv}")
    return 0


def _sample_view_coords(rc: RunConfig, spec, n_views: int):
    from .diffusion import default_view_coords
    from .field import camera_coordinate

    if spec.metric_dim != 6:
        return default_view_coords(spec, n_views)
    from .datasets import ToyMultiViewSpec

    ts = ToyMultiViewSpec()
    return [camera_coordinate(2 * math.pi * i / n_views, ts.elevation, ts.camera_radius, ts.focal)
            for i in range(n_views)]


def cmd_sample(args) -> int:
    from .conditioning import embed_text_toy, embed_view, load_external_embeddings
    from .diffusion import sample_field
    from .field import FieldSpec, View
    from .io import from_uint8, read_image

    rc, net = _load_checkpoint_net(args.ckpt)
    sched = rc.schedule()
    if args.steps is not None and args.steps != sched.num_steps:
        raise ValueError(f"--steps must equal the trained schedule length {sched.num_steps} "
                         "(step respacing is not supported)")
    c = rc["cond"]
    if args.caption is not None:
        cond = embed_text_toy(args.caption, c["cond_tokens"], c["cond_dim"], c["seed"])
        cond_desc = f"caption: {args.caption}"
    elif args.cond_view is not None:
        cond = embed_view(View(from_uint8(read_image(args.cond_view))), c["cond_dim"])
        cond_desc = f"cond-view: {args.cond_view}"
    else:
        cond = load_external_embeddings(args.cond_file, cond_dim=c["cond_dim"])
        cond_desc = f"cond-file: {args.cond_file}"
    d = rc["data"]
    guidance = rc["sample"]["guidance"] if args.guidance is None else args.guidance
    spec = FieldSpec(metric_dim=rc.metric_dim, height=d["height"], width=d["width"], num_views=args.views)
    rng = np.random.default_rng(args.seed)
    with _thread_limit(True):
        views = sample_field(net, cond, spec, args.views, sched, guidance, rng, rc.codec(),
                             view_coords=_sample_view_coords(rc, spec, args.views),
                             num_freqs=rc["field"]["num_freqs"],
                             channel_mask=rc["sample"]["channel_mask"],
                             shared_init_noise=rc["sample"]["shared_init_noise"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, v in enumerate(views):
        write_image(out / f"view_{i:03d}.{args.format}", to_uint8(v.pixels))
    meta = [f"seed = {args.seed}", f"guidance = {guidance!r}", f"steps = {sched.num_steps}",
            f"views = {args.views}", f"checkpoint = {args.ckpt}", cond_desc]
    (out / "metadata.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
    print(f"wrote {len(views)} views to {out}")
    return 0


def cmd_cost(args) -> int:
    from .costmodel import estimate_macs, estimate_memory, write_csv
    from .scorenet import ScoreNetConfig

    heads = args.heads
    if heads is None:
        heads = 16 if args.width % 16 == 0 else 1
    cfg = ScoreNetConfig.dit_xl(depth=args.depth, width=args.width, heads=heads)
    rep = estimate_macs(cfg, args.tokens, args.views, args.view_local, args.text)
    mem = estimate_memory(cfg, args.tokens, args.views, args.view_local)
    print(f"config: depth={cfg.depth} width={cfg.width} heads={cfg.heads} tokens/view={args.tokens} "
          f"views={args.views} view_local={args.view_local} text={args.text}")
    print(f"MACs total: {rep.macs} ({rep.macs / 1e9:.3f}G)")
    print(f"MACs core (qkv+attention+projection+mlp): {rep.core_macs}")
    print(f"MACs per view: {rep.macs_per_view:.0f}")
    for k, v in rep.breakdown.items():
        print(f"  {k}: {v}")
    print(f"memory: params {mem.params} B, activations {mem.activations} B, "
          f"attention scores {mem.attention_scores} B, total {mem.total} B")
    if args.csv:
        write_csv(args.csv, [{"depth": cfg.depth, "width": cfg.width, "heads": cfg.heads, "Z": args.tokens,
                              "n_views": args.views, "view_local": int(args.view_local),
                              "text": int(args.text), "macs": rep.macs, "act_mem": rep.activation_mem,
                              "params": rep.params}])
    return 0


def cmd_datagen(args) -> int:
    from .datasets import COLORS, MOTIONS, ToyMultiViewSpec, ToyVideoSpec, gen_toy_video, gen_toy_views
    from .datasets import write_manifest

    rng = np.random.default_rng(args.seed)
    fields = []
    colors, motions = list(COLORS), list(MOTIONS)
    for i in range(args.count):
        if args.kind == "views":
            fields.append(gen_toy_views(ToyMultiViewSpec(), seed=int(rng.integers(0, 1 << 30))))
        else:
            frames = 1 if args.kind == "image" else args.frames
            spec = ToyVideoSpec(frames=frames, color=colors[i % 3], motion=motions[(i // 3) % 2])
            fields.append(gen_toy_video(spec, seed=int(rng.integers(0, 1 << 30))))
    manifest = write_manifest(args.out, fields, ext=f".{args.format}")
    print(f"wrote {len(fields)} fields; manifest {manifest}")
    return 0


def cmd_eval(args) -> int:
    from .evalsuite import reconstruction_eval
    from .training import text_embedder

    rc, net = _load_checkpoint_net(args.ckpt)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = set(metrics) - {"mse", "psnr"}
    if bad:
        raise ValueError(f"unknown metrics: {sorted(bad)}")
    fields = _load_dataset(args.data, rc)
    if not fields:
        raise ValueError("no fields to evaluate")
    c = rc["cond"]
    with _thread_limit(True):
        rep = reconstruction_eval(net, fields, rc.schedule(), rc.codec(),
                                  text_embedder(c["cond_tokens"], c["cond_dim"], c["seed"]),
                                  t=args.t, seed=args.seed, num_freqs=rc["field"]["num_freqs"])
    if "mse" in metrics:
        print(f"mse: {rep.mean_mse:.6f}")
    if "psnr" in metrics:
        print(f"psnr: {rep.mean_psnr:.3f} dB")
    if args.out:
        rep.write_csv(args.out)
    return 0


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="t1diff", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a score network")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True, help="manifest path, or 'toy' for the built-in toy set")
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--strict-deterministic", action="store_true")
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate views from a checkpoint")
    s.add_argument("--ckpt", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--caption")
    g.add_argument("--cond-view")
    g.add_argument("--cond-file")
    s.add_argument("--views", type=int, default=8)
    s.add_argument("--steps", type=int)
    s.add_argument("--guidance", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("ppm", "png"), default="ppm")
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("cost", help="analytic MACs / memory")
    c.add_argument("--depth", type=int, default=28)
    c.add_argument("--width", type=int, default=1152)
    c.add_argument("--heads", type=int)
    c.add_argument("--tokens", type=int, default=256)
    c.add_argument("--views", type=int, default=1)
    c.add_argument("--view-local", action=argparse.BooleanOptionalAction, default=True)
    c.add_argument("--text", action=argparse.BooleanOptionalAction, default=True)
    c.add_argument("--csv")
    c.set_defaults(func=cmd_cost)

    d = sub.add_parser("datagen", help="write toy fields + manifest")
    d.add_argument("--kind", choices=("video", "views", "image"), default="video")
    d.add_argument("--count", type=int, default=4)
    d.add_argument("--frames", type=int, default=8)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--format", choices=("ppm", "png"), default="ppm")
    d.set_defaults(func=cmd_datagen)

    e = sub.add_parser("eval", help="reconstruction MSE/PSNR at a fixed timestep")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metrics", default="mse,psnr")
    e.add_argument("--t", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and not Path(args.config).is_file():
        parser.error(f"config file not found: {args.config}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError, OSError,
            FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
