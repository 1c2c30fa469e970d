import numpy as np
import pytest

from p2pagg.core import plaintext_update, surjectivity_roundtrip
from p2pagg.learner import MeanModel, SoftmaxModel, make_blobs
from p2pagg.protocols.cc import CcParams, CcSpec
from p2pagg.protocols.flt import FltParams, FltSpec, Householder, lattice_repair
from p2pagg.protocols.rsa import RsaParams, RsaSpec, sign_bits


@pytest.fixture
def blobs():
    return make_blobs(3, classes=3, dim=4, n=600)


def _specs(blobs):
    model = SoftmaxModel(blobs.dim, blobs.classes)
    root = blobs.subset(np.arange(60))
    return [RsaSpec(model), CcSpec(model), FltSpec(model, root)]


@pytest.mark.parametrize("which", [0, 1, 2])
def test_surjectivity(blobs, which, rng):
    spec = _specs(blobs)[which]
    w = rng.standard_normal(spec.model.n_params) * 0.1
    ctx = spec.round_context(w, 0)
    for _ in range(100):
        v = spec.sample_valid(ctx, rng)
        assert spec.in_domain(v, ctx)
        assert surjectivity_roundtrip(spec, v, ctx)


@pytest.mark.parametrize("which", [0, 1, 2])
def test_preprocess_lands_in_domain(blobs, which, rng):
    spec = _specs(blobs)[which]
    w = np.zeros(spec.model.n_params)
    ctx = spec.round_context(w, 0)
    for scale in (1e-4, 0.01, 1.0, 100.0):
        u = w + rng.standard_normal(w.size) * scale
        assert spec.in_domain(spec.preprocess(u, ctx), ctx)


def test_rsa_postprocess_formula(rng):
    spec = RsaSpec(MeanModel(6), RsaParams(lam=0.1, eta0=0.5, gamma=0.0, rho=0.01))
    ctx = spec.round_context(rng.standard_normal(6), 0)
    us = [rng.standard_normal(6) for _ in range(5)]
    S = sum(sign_bits(u, ctx.w) for u in us)
    want = ctx.w - 0.5 * (0.01 * ctx.w + 0.1 * (2 * S - 5))
    assert np.allclose(plaintext_update(spec, us, ctx), want)
    # sign of (w - u): ties go to 1
    assert sign_bits(np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.0, 4.0])).tolist() == [1, 0, 1]


def test_cc_matches_float_clipping_within_a_step(rng):
    spec = CcSpec(MeanModel(8), CcParams(tau=0.05, theta=32, eta=1.0))
    ctx = spec.round_context(rng.standard_normal(8), 0)
    us = [ctx.w + rng.standard_normal(8) * 0.1 for _ in range(7)]
    fixed = plaintext_update(spec, us, ctx)
    real = spec.real_aggregate(us, ctx)
    assert np.all(np.abs(fixed - real) <= spec.codec.step)


def test_cc_tiny_codec_rounds_half_even():
    spec = CcSpec(MeanModel(1), CcParams(tau=0.5, theta=16))
    ctx = spec.round_context(np.zeros(1), 0)
    assert spec.quantize(np.array([0.0]), ctx)[0] == 32768  # 32767.5 rounds to even


def test_flt_matches_float_fltrust(blobs, rng):
    spec = _specs(blobs)[2]
    w = rng.standard_normal(spec.model.n_params) * 0.1
    ctx = spec.round_context(w, 0)
    g0 = ctx.extra["g0"]
    us = [g0 + rng.standard_normal(w.size) * 0.3 * np.linalg.norm(g0) for _ in range(6)]
    us.append(-g0)  # pointing away: zero trust
    fixed = plaintext_update(spec, us, ctx)
    real = spec.real_aggregate(us, ctx)
    assert np.linalg.norm(fixed - real) <= 2e-3 * np.linalg.norm(real - w) + 1e-9


def test_flt_negative_cosine_submits_bottom(blobs, rng):
    spec = _specs(blobs)[2]
    ctx = spec.round_context(np.zeros(spec.model.n_params), 0)
    v = spec.preprocess(-ctx.extra["g0"], ctx)
    mags = spec.magnitudes(v)
    assert mags[0] == 0 and mags[1] == spec.scale and mags[2:].sum() == 0
    assert np.all(v["signs"] == 1)


def test_householder_maps_unit_to_first_axis(rng):
    a = rng.standard_normal(7)
    a /= np.linalg.norm(a)
    M = Householder(a)
    e1 = np.eye(7)[0]
    assert np.allclose(M.apply(a), e1)
    x = rng.standard_normal(7)
    assert np.allclose(M.apply(M.apply(x)), x)
    assert np.isclose(np.linalg.norm(M.apply(x)), np.linalg.norm(x))


def test_lattice_repair_hits_target_exactly(rng):
    S = 1 << 14
    for d in (5, 12, 44, 200):
        for _ in range(20):
            r = rng.standard_normal(d)
            r /= np.linalg.norm(r)
            ex = np.abs(r) * S
            m = lattice_repair(np.rint(ex).astype(np.int64), ex, S * S)
            assert int(np.dot(m, m)) == S * S
            assert np.abs(m - ex).max() < 256


def test_flt_skips_degenerate_root(blobs):
    spec = _specs(blobs)[2]
    spec.model_update = lambda w, data, rng: np.zeros_like(w)
    assert spec.round_context(np.zeros(spec.model.n_params), 0) is None


def test_param_validation():
    with pytest.raises(ValueError):
        CcParams(tau=0)
    with pytest.raises(ValueError):
        FltParams(root_fraction=1.5)
    with pytest.raises(ValueError):
        RsaParams(lam=-1)
