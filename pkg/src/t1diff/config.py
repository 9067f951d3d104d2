"""Run configuration: schema, defaults, and component construction."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import PatchCodec, PatchCodecConfig
from .diffusion import NoiseSchedule, make_schedule
from .io import format_config, parse_config
from .scorenet import ScoreNet, ScoreNetConfig

SCHEMA = {
    "model": {"depth": 4, "width": 128, "heads": 4, "mlp_ratio": 4, "adaln_zero": True,
              "view_local": True, "seed": 0},
    "codec": {"patch": 4, "mode": "raw", "seed": 0},
    "cond": {"cond_tokens": 16, "cond_dim": 64, "seed": 0},
    "field": {"num_freqs": 10},
    "schedule": {"steps": 200, "beta_start": 5e-4, "beta_end": 0.1},
    "train": {"n_views": 8, "batch_fields": 16, "lr": 1e-4, "steps": 2000, "cond_dropout": 0.1,
              "seed": 0, "checkpoint_every": 500, "precision": "float32"},
    "sample": {"guidance": 8.5, "channel_mask": "pixel", "shared_init_noise": False},
    "data": {"kind": "video", "height": 16, "width": 16, "frames": 8, "square_size": 4, "views": 16},
}

METRIC_DIMS = {"image": 2, "video": 3, "views": 6}


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def default(cls) -> "RunConfig":
        return cls(copy.deepcopy(SCHEMA))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls(parse_config(text, SCHEMA, source))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))

    def to_text(self) -> str:
        return format_config(self.values)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def validate(self) -> None:
        v = self.values
        if v["data"]["kind"] not in METRIC_DIMS:
            raise ValueError(f"data.kind must be one of {sorted(METRIC_DIMS)}")
        if v["sample"]["channel_mask"] not in ("pixel", "token3", "all"):
            raise ValueError("sample.channel_mask must be pixel, token3 or all")
        if v["train"]["precision"] not in ("float32", "float64"):
            raise ValueError("train.precision must be float32 or float64")
        if v["sample"]["guidance"] < 0:
            raise ValueError("sample.guidance must be >= 0")

    # -- builders ---------------------------------------------------------
    @property
    def metric_dim(self) -> int:
        return METRIC_DIMS[self["data"]["kind"]]

    @property
    def dtype(self):
        return np.float32 if self["train"]["precision"] == "float32" else np.float64

    def schedule(self) -> NoiseSchedule:
        s = self["schedule"]
        return make_schedule(s["steps"], s["beta_start"], s["beta_end"])

    def codec(self) -> PatchCodec:
        c = self["codec"]
        return PatchCodec(PatchCodecConfig(patch=c["patch"], signal_dim=3, mode=c["mode"], seed=c["seed"]))

    def net_config(self) -> ScoreNetConfig:
        m, c = self["model"], self["cond"]
        codec = self.codec()
        return ScoreNetConfig(depth=m["depth"], width=m["width"], heads=m["heads"],
                              mlp_ratio=m["mlp_ratio"], token_dim=codec.token_dim,
                              coord_dim=self.metric_dim * 2 * self["field"]["num_freqs"],
                              cond_dim=c["cond_dim"], cond_tokens=c["cond_tokens"],
                              adaln_zero=m["adaln_zero"], view_local=m["view_local"])

    def build_net(self) -> ScoreNet:
        from . import numerics as nx

        with nx.precision(self.dtype):
            return ScoreNet(self.net_config(), seed=self["model"]["seed"])
