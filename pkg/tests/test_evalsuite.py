import itertools
import math

import numpy as np
import pytest

from t1diff.codec import PatchCodec, PatchCodecConfig
from t1diff.datasets import COLORS, ToyVideoSpec, gen_toy_video, toy_video_dataset
from t1diff.diffusion import make_schedule
from t1diff.evalsuite import (EvalReport, class_centroids, classify, coherence_score, condition_accuracy,
                              psnr, reconstruction_eval, timestep_for_alpha_bar)
from t1diff.scorenet import ScoreNet, ScoreNetConfig


def classes(data):
    return [(f"a {c} square moving left to right", [f for f in data if f.meta["color"] == c]) for c in COLORS]


def test_psnr_formula():
    assert psnr(4.0) == 0.0
    assert math.isclose(psnr(0.04), 20.0)
    assert psnr(0.0) == math.inf


def test_coherence_linear_motion_zero():
    f = gen_toy_video(ToyVideoSpec(height=32, width=32, frames=8, square_size=4), offset=5)
    assert coherence_score(f.views) < 1e-9


def test_coherence_shuffled_worse():
    f = gen_toy_video(ToyVideoSpec(height=16, width=30, frames=8), offset=2)
    base = coherence_score(f.views)
    shuffled = [f.views[i] for i in (0, 5, 2, 7, 1, 4, 3, 6)]
    assert coherence_score(shuffled) > base


def test_coherence_identity_is_best_ordering():
    f = gen_toy_video(ToyVideoSpec(height=16, width=30, frames=5), offset=2)
    scores = [coherence_score([f.views[i] for i in p]) for p in itertools.permutations(range(5))]
    assert scores[0] == min(scores)


def test_coherence_errors_and_empty_views():
    f = gen_toy_video(ToyVideoSpec(), offset=0)
    with pytest.raises(ValueError):
        coherence_score(f.views[:2])
    blank = [f.views[0], f.views[1], type(f.views[0])(np.full((16, 16, 3), -1.0))]
    assert coherence_score(blank) == math.inf


def test_classifier_perfect_on_training_data():
    data = toy_video_dataset()
    cls = classes(data)
    cents = class_centroids(cls)
    for k, (_, flds) in enumerate(cls):
        assert classify([f.views for f in flds], cents) == [k] * len(flds)


def test_condition_accuracy_with_oracle_and_order_invariance():
    data = toy_video_dataset()
    lookup = {cap: flds for cap, flds in classes(data)}

    def oracle(captions, seed):
        r = np.random.default_rng(seed)
        return [lookup[c][r.integers(len(lookup[c]))].views for c in captions]

    assert condition_accuracy(oracle, classes(data), 4) == 1.0
    assert condition_accuracy(oracle, classes(data)[::-1], 4) == 1.0
    accs = {condition_accuracy(oracle, classes(data), 3, seed=s) for s in range(3)}
    assert accs == {1.0}


def test_condition_accuracy_unconditional_near_chance():
    data = toy_video_dataset()
    r = np.random.default_rng(0)

    def ignore_caption(captions, seed):
        return [data[r.integers(len(data))].views for _ in captions]

    acc = condition_accuracy(ignore_caption, classes(data), 60)
    assert abs(acc - 1 / 3) < 0.12


def test_condition_accuracy_needs_two_classes():
    with pytest.raises(ValueError):
        condition_accuracy(lambda c, s: [], classes(toy_video_dataset())[:1], 2)


def test_reconstruction_eval_untrained_is_poor():
    data = toy_video_dataset()[:4]
    sched = make_schedule(200, 5e-4, 0.1)
    net = ScoreNet(ScoreNetConfig(depth=1, width=16, heads=2))
    rep = reconstruction_eval(net, data, sched, PatchCodec(PatchCodecConfig(patch=4)))
    assert len(rep.mse) == 4 and rep.mean_psnr < 12.0
    assert abs(sched.alpha_bar[timestep_for_alpha_bar(sched)] - 0.5) < 0.01


def test_report_csv(tmp_path):
    rep = EvalReport(mse=[0.04, 0.01], psnr=[psnr(0.04), psnr(0.01)])
    rep.write_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "field,mse,psnr" and lines[-1].startswith("mean,0.025")
