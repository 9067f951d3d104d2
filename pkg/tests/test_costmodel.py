from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t1diff.costmodel import (CORE_KEYS, estimate_macs, estimate_memory, parameter_count, read_csv,
                              sweep)
from t1diff.scorenet import ScoreNetConfig

XL = ScoreNetConfig.dit_xl()


def test_dit_xl_scale_macs():
    with_text = estimate_macs(XL, 256, text_cond=True).macs
    without = estimate_macs(XL, 256, text_cond=False).macs
    assert abs(with_text / 117.06e9 - 1) < 0.10
    assert abs(without / 113.31e9 - 1) < 0.10
    assert with_text > without


def test_core_formula_value_at_dit_xl_scale():
    n, d = 256, 1152
    assert estimate_macs(XL, 256).core_macs == 28 * (12 * n * d * d + 2 * n * n * d)


def test_hand_count_tiny():
    rep = estimate_macs(ScoreNetConfig(depth=1, width=2, heads=1), 1)
    assert rep.core_macs == 52
    assert [rep.breakdown[k] for k in CORE_KEYS] == [12, 4, 4, 32]


@settings(max_examples=30, deadline=None)
@given(depth=st.integers(1, 8), width=st.sampled_from([8, 16, 64]), z=st.integers(1, 64),
       n=st.integers(1, 8), local=st.booleans(), text=st.booleans())
def test_breakdown_sums_to_total(depth, width, z, n, local, text):
    rep = estimate_macs(ScoreNetConfig(depth=depth, width=width, heads=2), z, n, local, text)
    assert rep.macs == sum(rep.breakdown.values())


def test_view_local_attention_linear_in_views():
    att = [estimate_macs(XL, 256, n, True).breakdown["attention"] for n in (1, 4, 8)]
    assert att[1] == 4 * att[0] and att[2] == 8 * att[0]
    rows = sweep(XL, views=(1, 4, 8))
    lin = [r["macs"] - estimate_macs(XL, 256, r["n_views"]).breakdown["conditioning"] for r in rows]
    assert lin[1] == 4 * lin[0] and lin[2] == 8 * lin[0]


def test_global_attention_quadratic():
    a = [estimate_macs(XL, z, 1, False).breakdown["attention"] for z in (256, 4096)]
    assert a[1] == 256 * a[0]
    g = [estimate_macs(XL, 64, n, False).breakdown["attention"] for n in (1, 8)]
    assert g[1] == 64 * g[0]


def test_score_memory_global_vs_local():
    loc = estimate_memory(XL, 1024, 8, True).attention_scores
    glob = estimate_memory(XL, 1024, 8, False).attention_scores
    assert glob == 8 * loc
    assert estimate_memory(XL, 1, 1, True, bytes_per_scalar=1).attention_scores == XL.depth * XL.heads


def test_width_doubling_quadruples_params():
    small = ScoreNetConfig(depth=28, width=576, heads=16, token_dim=64, cond_dim=64, cond_tokens=16)
    big = replace(small, width=1152)
    ratio = estimate_memory(big, 256).params / estimate_memory(small, 256).params
    assert 3.8 < ratio <= 4.0
    assert parameter_count(big) == estimate_memory(big, 256, bytes_per_scalar=1).params


def test_token_reduction_gives_4x_linear_savings():
    lin = lambda z: sum(estimate_macs(XL, z).breakdown[k] for k in ("qkv", "projection", "mlp"))
    assert lin(1024) / lin(256) >= 4
    assert estimate_macs(XL, 1024).core_macs / estimate_macs(XL, 256).core_macs >= 4


def test_sweep_csv_roundtrip(tmp_path):
    rows = sweep(XL, csv_path=tmp_path / "s.csv", chart_path=tmp_path / "s.ppm")
    assert len(rows) == 1 and rows[0]["macs"] == estimate_macs(XL, 256).macs
    assert read_csv(tmp_path / "s.csv") == rows
    assert (tmp_path / "s.ppm").read_bytes().startswith(b"P6")


def test_sweep_per_view_accounting():
    rows = sweep(XL, views=(8,), accounting="view")
    assert rows[0]["macs"] == estimate_macs(XL, 256, 8).macs // 8


def test_sweep_errors():
    with pytest.raises(ValueError):
        sweep(XL, views=())
    with pytest.raises(ValueError):
        estimate_macs(XL, 0)
