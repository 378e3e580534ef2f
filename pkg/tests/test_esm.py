import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from esm_tts import numeric as nc
from esm_tts.errors import ConsistencyFailure, ShapeMismatch
from esm_tts.esm import (
    ESMConfig,
    ESMParams,
    cosine_head,
    decompose,
    esm_backward,
    esm_forward,
    esm_forward_mixed,
    multi_head,
)
from helpers import random_esm
from reference import reference_esm

V = np.array([0.5, -2.0])


# ---------------------------------------------------------------- cosine_head


def test_cosine_parallel():
    alpha, head = cosine_head([1.0, 0.0], [1.0, 0.0], V)
    assert alpha == 1.0
    np.testing.assert_array_equal(head, V)


def test_cosine_orthogonal():
    alpha, head = cosine_head([1.0, 0.0], [0.0, 1.0], V)
    assert alpha == 0.0
    np.testing.assert_array_equal(head, 0.0 * V)


def test_cosine_antiparallel():
    alpha, head = cosine_head([1.0, 0.0], [-2.0, 0.0], V)
    assert alpha == -1.0
    np.testing.assert_array_equal(head, -V)


def test_cosine_degenerate():
    assert cosine_head([0.0, 0.0], [1.0, 0.0], V)[0] == 0.0
    assert cosine_head([1.0, 0.0], [1e-13, 0.0], V)[0] == 0.0


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
)
def test_cosine_in_range(q, k):
    alpha, _ = cosine_head(q, k, np.ones(3))
    assert -1.0 <= alpha <= 1.0


# ---------------------------------------------------------------- multi_head


def test_multi_head_value_annihilation():
    rng = np.random.default_rng(0)
    p, e, lp, _ = random_esm(rng)
    p.w_v[:] = 0.0
    p.b_v[:] = 0.0
    p.b_o[:] = 0.0
    dyn, alpha, _, _ = multi_head(e, lp, p)
    np.testing.assert_array_equal(dyn, 0.0)
    assert alpha.shape == (3, 2)


def test_multi_head_hand_computed():
    cfg = ESMConfig(d_model=2, heads=1, ffn_hidden=2)
    p = ESMParams.init(cfg, 0)
    p.w_q[:] = [[1.0, 0.0], [0.0, 1.0]]
    p.w_k[:] = [[2.0, 0.0], [0.0, 0.0]]
    p.w_v[:] = [[1.0, 1.0], [0.0, 2.0]]
    p.b_v[:] = [0.5, 0.0]
    p.w_o[:] = [[1.0, 2.0], [3.0, 4.0]]
    p.b_o[:] = [0.0, 1.0]
    e = np.array([[3.0, 4.0]])
    lp_n = np.array([1.0, -1.0])
    # q = (3, 4); k = (2, 0) -> alpha = 6 / (5 * 2) = 0.6
    # v = (1*1 + -1*0 + 0.5, 1*1 + -1*2) = (1.5, -1)
    # head = (0.9, -0.6); out = (0.9 - 1.8, 1.8 - 2.4 + 1) = (-0.9, 0.4)
    dyn, alpha, _, _ = multi_head(e, lp_n, p)
    assert alpha[0, 0] == pytest.approx(0.6, abs=1e-15)
    np.testing.assert_allclose(dyn, [[-0.9, 0.4]], atol=1e-14)


@pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
def test_alpha_key_scale_invariance(c):
    rng = np.random.default_rng(3)
    p, e, lp, _ = random_esm(rng, t=5, d=8, heads=2)
    lp_n = rng.normal(size=8)
    _, a1, _, _ = multi_head(e, lp_n, p)
    _, a2, _, _ = multi_head(e, c * lp_n, p)
    np.testing.assert_allclose(a2, a1, rtol=1e-9, atol=0)


@pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
def test_alpha_query_scale_invariance(c):
    rng = np.random.default_rng(4)
    p, e, _, _ = random_esm(rng, t=5, d=8, heads=2)
    lp_n = rng.normal(size=8)
    _, a1, _, _ = multi_head(e, lp_n, p)
    _, a2, _, _ = multi_head(c * e, lp_n, p)
    np.testing.assert_allclose(a2, a1, rtol=1e-9, atol=0)


def test_multi_head_shape_mismatch():
    p, e, lp, _ = random_esm(np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        multi_head(e[:, :4], lp, p)


# ---------------------------------------------------------------- esm_forward


def test_forward_reduces_to_embedding():
    p, e, lp, _ = random_esm(np.random.default_rng(1))
    for name in ("w_v", "b_v", "w_o", "b_o", "ffn_w2", "ffn_b2"):
        getattr(p, name)[...] = 0.0
    f, _ = esm_forward(e, lp, p)
    np.testing.assert_array_equal(f, np.broadcast_to(lp, f.shape))


@pytest.mark.parametrize("seed", range(5))
def test_residual_identity_bit_exact(seed):
    p, e, lp, _ = random_esm(np.random.default_rng(seed))
    _, diag = esm_forward(e, lp, p)
    np.testing.assert_array_equal(diag.dynamic + diag.static, diag.m_o)
    np.testing.assert_array_equal(diag.static, lp)
    # subtraction re-rounds, so recovering lp from M is exact only to an ulp of M
    ulp = np.spacing(np.abs(diag.m_o).max())
    np.testing.assert_allclose(diag.m_o - diag.dynamic, np.broadcast_to(lp, diag.m_o.shape), rtol=0, atol=ulp)


@pytest.mark.parametrize("kernel", [1, 3])
@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_reference(seed, kernel):
    rng = np.random.default_rng(100 + seed)
    p, e, lp, _ = random_esm(rng, t=3, d=8, heads=2, kernel=kernel)
    f, diag = esm_forward(e, lp, p)
    ref_f, ref_alpha, ref_dyn, ref_m = reference_esm(
        e.tolist(), lp.tolist(), lp.tolist(), {k: v.tolist() for k, v in p.arrays().items()}, 2, p.config.eps
    )
    np.testing.assert_allclose(f, ref_f, rtol=0, atol=1e-12)
    np.testing.assert_allclose(diag.alpha, ref_alpha, rtol=0, atol=1e-12)
    np.testing.assert_allclose(diag.dynamic, ref_dyn, rtol=0, atol=1e-12)
    np.testing.assert_allclose(diag.m_o, ref_m, rtol=0, atol=1e-12)


def test_mixed_equal_sources_bit_exact():
    p, e, lp, _ = random_esm(np.random.default_rng(2))
    f1, d1 = esm_forward(e, lp, p)
    f2, d2 = esm_forward_mixed(e, lp, lp.copy(), p)
    np.testing.assert_array_equal(f1, f2)
    np.testing.assert_array_equal(d1.alpha, d2.alpha)


def test_mixed_matches_reference():
    rng = np.random.default_rng(9)
    p, e, lp_dyn, lp_stat = random_esm(rng, t=4, d=8, heads=4)
    f, _ = esm_forward_mixed(e, lp_dyn, lp_stat, p)
    ref_f, *_ = reference_esm(
        e.tolist(), lp_dyn.tolist(), lp_stat.tolist(), {k: v.tolist() for k, v in p.arrays().items()}, 4, p.config.eps
    )
    np.testing.assert_allclose(f, ref_f, rtol=0, atol=1e-12)


def test_mixed_static_swap_shifts_residual_exactly():
    p, e, lp_a, lp_b = random_esm(np.random.default_rng(5))
    _, da = esm_forward_mixed(e, lp_a, lp_a, p)
    _, db = esm_forward_mixed(e, lp_a, lp_b, p)
    # attention path unchanged; residual term moves by lp_b - lp_a
    np.testing.assert_array_equal(da.dynamic, db.dynamic)
    np.testing.assert_array_equal(db.dynamic + lp_b, db.m_o)
    ulp = np.spacing(max(np.abs(da.m_o).max(), np.abs(db.m_o).max()))
    np.testing.assert_allclose(db.m_o - da.m_o, np.broadcast_to(lp_b - lp_a, da.m_o.shape), rtol=0, atol=2 * ulp)


def test_mixed_dynamic_swap_keeps_static():
    p, e, lp_a, lp_b = random_esm(np.random.default_rng(6))
    _, da = esm_forward_mixed(e, lp_a, lp_a, p)
    _, dc = esm_forward_mixed(e, lp_b, lp_a, p)
    np.testing.assert_array_equal(da.static, dc.static)
    assert not np.allclose(da.dynamic, dc.dynamic)


def test_forward_shape_errors():
    p, e, lp, _ = random_esm(np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        esm_forward(e, lp[:4], p)
    with pytest.raises(ShapeMismatch):
        esm_forward_mixed(e, lp, lp[:4], p)


def test_config_validation():
    with pytest.raises(ValueError):
        ESMConfig(d_model=10, heads=3)
    with pytest.raises(ValueError):
        ESMConfig(d_model=8, heads=2, kernel_width=2)
    with pytest.raises(ShapeMismatch):
        ESMParams(ESMConfig(4, 2, 4), **{n: np.zeros(1) for n in ESMParams.array_names()})


def test_full_scale_forward():
    cfg = ESMConfig()
    assert (cfg.d_model, cfg.heads, cfg.ffn_hidden) == (512, 8, 2048)
    p = ESMParams.init(cfg, 0)
    rng = np.random.default_rng(0)
    f, diag = esm_forward(rng.normal(size=(4, 512)), rng.normal(size=512), p)
    assert f.shape == (4, 512) and diag.alpha.shape == (4, 8)


# ---------------------------------------------------------------- decompose


def test_decompose_after_forward():
    p, e, lp, _ = random_esm(np.random.default_rng(7))
    _, diag = esm_forward(e, lp, p)
    static, dynamic = decompose(diag)
    np.testing.assert_array_equal(static + dynamic, diag.m_o)


def test_decompose_zero_embedding():
    p, e, _, _ = random_esm(np.random.default_rng(8))
    _, diag = esm_forward(e, np.zeros(8), p)
    static, dynamic = decompose(diag)
    np.testing.assert_array_equal(static, 0.0)
    np.testing.assert_array_equal(diag.m_o, dynamic)


def test_decompose_mixed_static_is_static_source():
    p, e, lp_a, lp_b = random_esm(np.random.default_rng(9))
    _, diag = esm_forward_mixed(e, lp_a, lp_b, p)
    np.testing.assert_array_equal(decompose(diag)[0], lp_b)


def test_decompose_detects_tampering():
    p, e, lp, _ = random_esm(np.random.default_rng(10))
    _, diag = esm_forward(e, lp, p)
    diag.m_o[0, 0] += 1.0
    with pytest.raises(ConsistencyFailure):
        decompose(diag)


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("kernel", [1, 3])
@pytest.mark.parametrize("seed", range(10))
def test_esm_gradients(seed, kernel):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(1, 7))
    heads = int(rng.choice([1, 2, 4]))
    p, e, lp_d, lp_s = random_esm(rng, t=t, d=8, heads=heads, hidden=10, kernel=kernel)
    r = rng.normal(size=(t, 8))
    state = {"e": e, "lp_d": lp_d, "lp_s": lp_s}

    def lg():
        f, diag = esm_forward_mixed(state["e"], state["lp_d"], state["lp_s"], p)
        de, dd, ds, g = esm_backward(r, diag, p)
        return float((f * r).sum()), {**g, "e": de, "lp_d": dd, "lp_s": ds}

    report = nc.grad_check(lg, {**p.arrays(), **state}, h=1e-4)
    assert report.max_rel_error < 1e-3, report.per_param


def test_degenerate_query_has_zero_gradient():
    p, e, lp, _ = random_esm(np.random.default_rng(11), t=2)
    e[0] = 0.0
    f, diag = esm_forward(e, lp, p)
    assert diag.degenerate[0].all() and not diag.degenerate[1].any()
    de, *_ = esm_backward(np.ones_like(f), diag, p)
    assert np.all(np.isfinite(de))
