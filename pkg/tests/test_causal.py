from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ricensor.causal import (
    ADD_G,
    BFP_T,
    MODEL_NAMES,
    Theta,
    exposure_values,
    from_uniformity,
    parse_model,
    shift,
    to_uniformity,
)
from ricensor.interference import build_from_edges, empty, exposure, gen_poisson_neighbors

finite = st.floats(-3, 3, allow_nan=False)


def bfp_scalar(delta, tau, z, t):
    # direct evaluation, no expm1/log1p
    return delta + math.log(1 + (1 - z) * (math.exp(-delta) - 1) * math.exp(-(tau**2) * t))


class TestShift:
    def test_additive(self):
        assert shift(ADD_G, Theta(0.7, 2.8), 1, 0.5) == pytest.approx(2.1, abs=1e-15)

    @pytest.mark.parametrize("t", [0, 1, 7])
    def test_bfp_treated_is_delta(self, t):
        assert shift(BFP_T, Theta(0.9, 1.3), 1, t) == pytest.approx(0.9, abs=1e-15)

    def test_bfp_untreated_unexposed_is_zero(self):
        assert shift(BFP_T, Theta(0.9, 1.3), 0, 0) == pytest.approx(0.0, abs=1e-15)

    def test_bfp_reference_value(self):
        # frozen from bfp_scalar(0.7, 1.0, 0, 1)
        assert shift(BFP_T, Theta(0.7, 1.0), 0, 1) == pytest.approx(0.4951924162579252, rel=1e-14)
        assert bfp_scalar(0.7, 1.0, 0, 1) == pytest.approx(0.4951924162579252, rel=1e-14)

    @given(finite, finite, st.integers(0, 1), st.floats(0, 20))
    def test_bfp_matches_direct_formula(self, d, t, z, e):
        assert shift(BFP_T, Theta(d, t), z, e) == pytest.approx(bfp_scalar(d, t, z, e), abs=1e-12)

    @given(st.floats(0.01, 3), st.floats(0, 3), st.integers(0, 1), st.floats(0, 20))
    def test_bfp_bounded_by_delta(self, d, t, z, e):
        v = shift(BFP_T, Theta(d, t), z, e)
        assert -1e-12 <= v <= d + 1e-12

    @given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 1), st.floats(0, 1))
    def test_additive_monotone(self, d, t, e1, e2):
        lo, hi = sorted((e1, e2))
        th = Theta(d, t)
        assert shift(ADD_G, th, 0, lo) <= shift(ADD_G, th, 0, hi)
        assert shift(ADD_G, th, 0, lo) <= shift(ADD_G, th, 1, lo)

    def test_vectorised(self):
        z = np.array([0, 1, 0])
        e = np.array([0.0, 0.5, 1.0])
        np.testing.assert_allclose(shift(ADD_G, Theta(1.0, 2.0), z, e), [0.0, 2.0, 2.0])

    def test_theta_must_be_finite(self):
        with pytest.raises(ValueError):
            Theta(float("nan"), 0.0)


class TestModels:
    @pytest.mark.parametrize("name", MODEL_NAMES)
    def test_round_trip_names(self, name):
        assert parse_model(name).name == name

    def test_defaults(self):
        assert parse_model("add").name == "add-G"
        assert parse_model("bfp").name == "bfp-T"

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown causal model"):
            parse_model("probit-G")

    def test_gstar_needs_denominators(self):
        A = build_from_edges([(0, 1)], 2)
        with pytest.raises(ValueError):
            exposure_values(parse_model("add-Gstar"), A, np.array([0, 1]))

    def test_exposure_values_match_exposure(self):
        rng = np.random.default_rng(4)
        A = gen_poisson_neighbors(20, 3, rng)
        z = rng.integers(0, 2, 20)
        B = A.row_sums + 2
        ex = exposure(A, z, B)
        np.testing.assert_array_equal(exposure_values(parse_model("add-G"), A, z), ex.G)
        np.testing.assert_array_equal(exposure_values(parse_model("bfp-T"), A, z), ex.T)
        np.testing.assert_array_equal(exposure_values(parse_model("add-Gstar"), A, z, B), ex.G_star)


class TestUniformity:
    def test_zero_theta_is_identity(self):
        Y = np.array([1.0, 2.0, 3.0])
        A = build_from_edges([(0, 1), (2, 1)], 3)
        np.testing.assert_array_equal(to_uniformity(Y, np.array([0, 1, 0]), A, ADD_G, Theta(0, 0)), Y)

    def test_reference_value(self):
        A = build_from_edges([(0, 1), (0, 2)], 3)
        y0 = to_uniformity(np.array([100.0, 1.0, 1.0]), np.array([1, 1, 0]), A, ADD_G, Theta(0.7, 2.8))
        # 100 * exp(-2.1)
        assert y0[0] == pytest.approx(12.245642825298191, rel=1e-12)

    def test_uniformity_assignment_is_identity(self):
        y0 = np.array([1.5, 2.5])
        A = build_from_edges([(0, 1)], 2, symmetric=True)
        np.testing.assert_array_equal(from_uniformity(y0, np.zeros(2, int), A, ADD_G, Theta(0.5, 1.0)), y0)

    def test_no_spillover_scales_treated(self):
        y0 = np.array([1.0, 1.0, 1.0])
        A = build_from_edges([(0, 1), (1, 2)], 3)
        y = from_uniformity(y0, np.array([1, 0, 1]), A, ADD_G, Theta(0.4, 0.0))
        np.testing.assert_allclose(y, [math.exp(0.4), 1.0, math.exp(0.4)])

    @pytest.mark.parametrize("name", MODEL_NAMES)
    @given(data=st.data())
    def test_bijection(self, name, data):
        n = 15
        rng = np.random.default_rng(data.draw(st.integers(0, 10**6)))
        A = gen_poisson_neighbors(n, 3, rng)
        model = parse_model(name)
        B = A.row_sums + rng.integers(0, 3, n)
        theta = Theta(data.draw(finite), data.draw(finite))
        z = rng.integers(0, 2, n)
        Y = np.exp(rng.normal(0, 1, n))
        y0 = to_uniformity(Y, z, A, model, theta, B)
        np.testing.assert_allclose(from_uniformity(y0, z, A, model, theta, B), Y, rtol=1e-12)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError, match="entry 1"):
            to_uniformity(np.array([1.0, 0.0]), np.array([0, 1]), empty(2), ADD_G, Theta(0, 0))
        with pytest.raises(ValueError):
            from_uniformity(np.array([-1.0, 1.0]), np.array([0, 1]), empty(2), ADD_G, Theta(0, 0))
