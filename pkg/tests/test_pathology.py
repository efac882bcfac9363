import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpflow.pathology import (AtomCase, affine_dichotomy, atom_classify, pb1_family, pb1_z,
                                uniform_support)


def affine(p, g=lambda z: z):
    return lambda y, z: (y + g(z)) / p


def test_atom_case_validation():
    with pytest.raises(ValueError):
        AtomCase(0.5, 1.0, 1, 2, affine(0.5))
    with pytest.raises(ValueError):
        AtomCase(0.0, 0.5, 1, 2, affine(0.5))


def test_zero_generator_unique_quadruple():
    out = atom_classify(AtomCase(0.5, 0.5, 1.0, 2.0, lambda y, z: 0.0))
    assert out.kind == "unique"
    assert out.quadruple == (-1.0, 2.0, 1.0, 2.0)


def test_affine_cases():
    # the residual of delta = b + p f(delta, a - b) reduces to the constant b + g(a - b)
    assert atom_classify(AtomCase(0.5, 0.5, 1.0, 2.0, affine(0.5))).kind == "none"
    assert atom_classify(AtomCase(0.5, 0.5, 1.0, 0.0, affine(0.5))).kind == "none"
    out = atom_classify(AtomCase(0.5, 0.5, 0.0, 3.0, affine(0.5)))
    assert out.kind == "infinite"
    (g1, d1, r1, e1), (g2, d2, r2, e2) = out.witnesses
    assert d1 != d2
    for g, d, r, e in out.witnesses:
        # both witnesses solve the full system
        assert r == 0.0 and e == 3.0 and g == -3.0
        assert d == pytest.approx(3.0 + 0.5 * affine(0.5)(d, g))
        assert d + g == pytest.approx(r + 0.5 * affine(0.5)(d, g))


@settings(max_examples=60, deadline=None)
@given(a=st.integers(-4, 4), b=st.integers(-4, 4), k=st.sampled_from([1.0, -1.0, 2.0]))
def test_classifier_matches_affine_decision(a, b, k):
    g = lambda z: k * z
    out = atom_classify(AtomCase(0.5, 0.5, float(a), float(b), affine(0.5, g)))
    assert out.kind == affine_dichotomy(a, b, g)


def test_nonlinear_generator_unique_root():
    f = lambda y, z: np.tanh(y) + z
    out = atom_classify(AtomCase(0.5, 0.3, 1.0, 0.5, f))
    assert out.kind == "unique"
    gamma, delta, _, _ = out.quadruple
    assert delta == pytest.approx(0.5 + 0.3 * f(delta, gamma), abs=1e-10)


def test_support_family_values():
    case = uniform_support()
    fam = pb1_family(case, 1.0)
    assert fam(0.5) == pytest.approx(2.0, rel=1e-8)
    for w in (-1.0, 0.0, 1.0, 3.7):
        assert pb1_family(case, w).Y0 == w


def test_support_family_residuals():
    case = uniform_support()
    fams = [pb1_family(case, w) for w in (-1.0, 0.0, 1.0)]
    assert all(f.residual <= 1e-6 for f in fams)
    ts = np.linspace(0, 0.9, 10)
    assert not np.allclose(fams[0](ts), fams[2](ts))


@settings(max_examples=20, deadline=None)
@given(w=st.lists(st.floats(-5, 5), min_size=3, max_size=3, unique=True), t=st.floats(0.0, 0.95))
def test_support_family_affine_in_w(w, t):
    case = uniform_support(h=lambda s: np.cos(3 * np.asarray(s)))
    w0, w1, w2 = sorted(w)
    if w2 - w0 < 1e-3:
        return
    y0, y1, y2 = (pb1_family(case, x, n_grid=2001)(t) for x in (w0, w1, w2))
    lam = (w1 - w0) / (w2 - w0)
    assert y1 == pytest.approx(y0 + lam * (y2 - y0), rel=1e-9, abs=1e-9)


def test_support_residual_decreases_with_grid():
    case = uniform_support(h=lambda s: np.cos(3 * np.asarray(s)))
    res = [pb1_family(case, 0.5, n_grid=n).residual for n in (501, 2001, 8001)]
    assert res[0] > res[1] > res[2]


def test_support_clipping_warns():
    fam = pb1_family(uniform_support(), 1.0)
    with pytest.warns(UserWarning):
        fam(0.9999999)


def test_support_z():
    case = uniform_support()
    fam = pb1_family(case, 1.0)
    assert pb1_z(fam, case, 0.5) == pytest.approx(-2.0, rel=1e-8)
