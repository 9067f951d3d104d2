import numpy as np
import pytest

from t1diff import numerics as nx
from t1diff.conditioning import (ConditionEmbedding, embed_text_toy, embed_view, load_external_embeddings,
                                 null_condition, save_embedding)
from t1diff.datasets import COLORS, MOTIONS
from t1diff.field import View
from t1diff.scorenet import ScoreNet, ScoreNetConfig


def test_text_deterministic():
    a = embed_text_toy("a red square moving left to right")
    b = embed_text_toy("a red square moving left to right")
    assert a.tokens.tobytes() == b.tokens.tobytes() and a.source_tag == "text"


def test_desk_vocabulary_has_no_collisions():
    vocab = {"a", "square", "moving", "to", "colorful", "cube"}
    vocab |= set(COLORS) | {w for m in MOTIONS.values() for w in m.split()}
    rows = [embed_text_toy(w, 1).tokens[0] for w in sorted(vocab)]
    assert len({r.tobytes() for r in rows}) == len(vocab)
    a = embed_text_toy("a red square moving left to right").tokens
    b = embed_text_toy("a blue square moving left to right").tokens
    assert not np.array_equal(a, b)


def test_cyclic_padding_and_unit_norm():
    e = embed_text_toy("hello", cond_tokens=4)
    assert np.all(e.tokens == e.tokens[0])
    assert np.allclose(np.linalg.norm(e.tokens, axis=1), 1.0)
    e = embed_text_toy("one two three", cond_tokens=7)
    assert np.array_equal(e.tokens[3], e.tokens[0]) and np.array_equal(e.tokens[6], e.tokens[0])


def test_seed_changes_embedding():
    assert not np.array_equal(embed_text_toy("cube", seed=0).tokens, embed_text_toy("cube", seed=1).tokens)


def test_empty_caption_rejected():
    with pytest.raises(ValueError):
        embed_text_toy("   ")


def test_embedding_invariants():
    with pytest.raises(ValueError):
        ConditionEmbedding(np.full((2, 4), np.nan), "text")
    with pytest.raises(ValueError):
        ConditionEmbedding(np.full((1, 4), 6.0), "text")  # norm 12
    with pytest.raises(ValueError):
        ConditionEmbedding(np.zeros((1, 4)), "speech")


def test_view_embedding(rng):
    px = rng.uniform(-1, 1, (32, 32, 3))
    assert np.array_equal(embed_view(View(px)).tokens, embed_view(View(px.copy())).tokens)
    black = embed_view(View(np.full((16, 16, 3), -1.0))).tokens
    white = embed_view(View(np.full((16, 16, 3), 1.0))).tokens
    assert not np.allclose(black, white) and black.shape == (1, 64)
    recolor = px.copy()
    recolor[..., 0] = -recolor[..., 0]
    assert not np.allclose(embed_view(View(px)).tokens, embed_view(View(recolor)).tokens)


def test_null_condition_zero_at_init():
    e = null_condition(16, 64)
    assert e.source_tag == "null" and np.all(e.tokens == 0)
    net = ScoreNet(ScoreNetConfig(depth=1, width=16, heads=2))
    assert np.all(null_condition(16, 64, net).tokens == 0)


def test_null_condition_gets_gradient_under_dropout(rng):
    cfg = ScoreNetConfig(depth=1, width=16, heads=2, token_dim=6, coord_dim=8, cond_dim=5, cond_tokens=3)
    net = ScoreNet(cfg, seed=0)
    for p in net.parameters():
        p.data[...] = rng.normal(0, 0.3, p.shape)
    tok = rng.standard_normal((2, 1, 2, 6))
    crd = rng.standard_normal((2, 1, 2, 8))
    out = net(tok, crd, np.array([3, 4]), rng.standard_normal((2, 3, 5)), np.array([True, False]))
    nx.backward(nx.sum(nx.mul(out, out)), net.parameters())
    assert np.abs(net.params["null_cond"].grad).sum() > 0
    out = net(tok, crd, np.array([3, 4]), rng.standard_normal((2, 3, 5)))
    net.params["null_cond"].grad = None
    nx.backward(nx.sum(nx.mul(out, out)), net.parameters())
    assert np.all(net.params["null_cond"].grad == 0)


def test_external_roundtrip(tmp_path, rng):
    e = ConditionEmbedding(rng.uniform(-0.1, 0.1, (16, 64)), "external")
    save_embedding(tmp_path / "c.t1cp", e)
    back = load_external_embeddings(tmp_path / "c.t1cp", 16, 64)
    assert back.tokens.tobytes() == e.tokens.tobytes() and back.source_tag == "external"


def test_external_wrong_dim_names_values(tmp_path, rng):
    save_embedding(tmp_path / "c.t1cp", ConditionEmbedding(rng.uniform(-0.1, 0.1, (16, 32)), "external"))
    with pytest.raises(ValueError, match="expected cond_dim 64, got 32"):
        load_external_embeddings(tmp_path / "c.t1cp", cond_dim=64)


def test_external_t5_scale_accepted(tmp_path, rng):
    arr = rng.normal(0, 0.1, (256, 4096)) / 8
    save_embedding(tmp_path / "t5.t1cp", ConditionEmbedding(arr, "external"))
    cfg = ScoreNetConfig.dit_xl()
    e = load_external_embeddings(tmp_path / "t5.t1cp", cfg.cond_tokens, cfg.cond_dim)
    assert e.shape == (256, 4096)
