import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_image, random_probs
from scribble_pfa.core import ClassSet, LabelMap, ProbabilityMap, SoftMask, is_on_simplex
from scribble_pfa.errors import ClassSetMismatch, GridMismatch
from scribble_pfa.fusion import combine, extract_pfa, pfa_variants, run_variant, select_input
from scribble_pfa.regularizers import DenseCrfParams, PottsParams, crf_mean_field, potts_map


def test_combine_fixed_point():
    p = random_probs(np.random.default_rng(0), 4, 4, 3)
    for w in (0.0, 0.2, 0.5, 1.0):
        np.testing.assert_allclose(combine(p, p, w).probs, p.probs, atol=1e-15)


def test_combine_half_half():
    cs = ClassSet(2)
    a = ProbabilityMap(np.array([[[1.0, 0.0]]]), cs)
    b = ProbabilityMap(np.array([[[0.0, 1.0]]]), cs)
    np.testing.assert_array_equal(combine(a, b, 0.5).probs, [[[0.5, 0.5]]])


def test_combine_boundary_weights_exact():
    rng = np.random.default_rng(1)
    a, b = random_probs(rng, 3, 3, 4), random_probs(rng, 3, 3, 4)
    assert np.array_equal(combine(a, b, 0.0).probs, b.probs)
    assert np.array_equal(combine(a, b, 1.0).probs, a.probs)
    assert combine(a, b, 0.3).source == "combined"


def test_combine_errors():
    rng = np.random.default_rng(2)
    a = random_probs(rng, 3, 3, 3)
    with pytest.raises(ValueError):
        combine(a, a, 1.5)
    with pytest.raises(GridMismatch):
        combine(a, random_probs(rng, 3, 4, 3))
    with pytest.raises(ClassSetMismatch):
        combine(a, random_probs(rng, 3, 3, 4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.integers(2, 6))
def test_combine_stays_on_simplex(seed, w, c):
    rng = np.random.default_rng(seed)
    a, b = random_probs(rng, 4, 5, c, 0.2), random_probs(rng, 4, 5, c, 3.0)
    assert is_on_simplex(combine(a, b, w).probs)


def test_extract_examples():
    cs3 = ClassSet(3)
    assert extract_pfa(ProbabilityMap(np.array([[[0.1, 0.7, 0.2]]]), cs3)).labels.tolist() == [[1]]
    assert extract_pfa(SoftMask(np.array([[[0.5, 0.5]]]), ClassSet(2))).labels.tolist() == [[0]]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_extract_is_full_labelmap(seed):
    p = random_probs(np.random.default_rng(seed), 6, 6, 5)
    lm = extract_pfa(p)
    assert lm.is_full and lm.labels.max() < 5


def test_dispatch_identities():
    rng = np.random.default_rng(3)
    pl, pg = random_probs(rng, 6, 6, 3, source="local"), random_probs(rng, 6, 6, 3, source="global")
    img = random_image(rng, 6, 6)
    assert pfa_variants(pl, pg, "local") == extract_pfa(pl)
    assert pfa_variants(pl, pg, "global") == extract_pfa(pg)
    assert pfa_variants(pl, pg, "combined", w_local=0.3) == extract_pfa(combine(pl, pg, 0.3))
    prm = PottsParams(lam=0.3)
    assert pfa_variants(None, pg, "global", "potts", img, prm) == extract_pfa(potts_map(pg, img, prm)[0])


def test_combined_crf_equals_composition():
    rng = np.random.default_rng(4)
    pl, pg = random_probs(rng, 8, 9, 3), random_probs(rng, 8, 9, 3)
    img = random_image(rng, 8, 9)
    prm = DenseCrfParams(n_iters=4)
    res = run_variant(pl, pg, "combined", "crf", img, prm)
    q, rep = crf_mean_field(combine(pl, pg, 0.5), img, prm)
    assert res.labels == extract_pfa(q)
    assert res.report == rep


def test_potts_default_lambda_follows_variant():
    rng = np.random.default_rng(5)
    p = random_probs(rng, 3, 3, 3)
    assert select_input("global", None, p).source == "global"
    assert select_input("local", p, None).source == "local"
    assert PottsParams().resolve_lambda("global") == 50.0
    assert PottsParams().resolve_lambda("combined") == 10.0
    assert PottsParams().resolve_lambda(None) == 10.0
    assert PottsParams(lam=2.0).resolve_lambda("global") == 2.0


def test_variant_errors():
    rng = np.random.default_rng(6)
    p = random_probs(rng, 3, 3, 3)
    with pytest.raises(ValueError):
        pfa_variants(p, p, "bogus")
    with pytest.raises(ValueError):
        pfa_variants(None, p, "combined")
    with pytest.raises(ValueError):
        pfa_variants(p, p, "local", "potts")  # no image
    with pytest.raises(ValueError):
        pfa_variants(p, p, "local", "graphcut", random_image(rng, 3, 3))


def test_global_onehot_gives_perfect_pfa():
    from scribble_pfa.global_pam_io import labelmap_to_onehot

    lm = LabelMap(np.random.default_rng(7).integers(0, 4, size=(5, 5)), ClassSet(4))
    assert pfa_variants(None, labelmap_to_onehot(lm), "global") == lm
