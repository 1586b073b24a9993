import io
import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from synthcontrol.bias_lab import (
    LINEAR,
    GenerativeSpec,
    UnobservedBlock,
    as_link,
    associativity_gap,
    bias_gaps,
    bias_lower_bound,
    custom,
    generate_panel,
    power,
    reproduce_examples,
)
from synthcontrol.errors import DimensionMismatch, InvalidSpec
from synthcontrol.panel import load_panel, write_panel


def test_noiseless_linear_model_is_theta_times_z():
    theta = np.linspace(0.5, 2.0, 6)
    g = generate_panel(GenerativeSpec(n_donors=4, n_times=6, time_coeffs=theta, seed=1))
    np.testing.assert_array_equal(g.panel.outcomes, g.Z[:, [0]] * theta[None, :])
    assert np.all(g.eps == 0) and g.mu is None


def test_vector_time_coefficients():
    theta = np.random.default_rng(0).normal(size=(5, 3))
    g = generate_panel(GenerativeSpec(n_donors=6, n_times=5, n_covariates=3, time_coeffs=theta))
    np.testing.assert_allclose(g.panel.outcomes, g.Z @ theta.T, rtol=1e-14)
    assert g.panel.variable_names == ("outcome", "z1", "z2", "z3")
    np.testing.assert_array_equal(g.panel.covariates["z2"][:, 3], g.Z[:, 1])


def test_fixed_covariates_with_square_link():
    g = generate_panel(GenerativeSpec(n_donors=2, n_times=1, link="square", covariates=[2.0, 1.0, 3.0]))
    assert g.panel.outcomes[:, 0].tolist() == [4.0, 1.0, 9.0]
    assert g.treated_unit == "unit1"


def test_injected_noise():
    g = generate_panel(
        GenerativeSpec(n_donors=2, n_times=1, link=power(2), covariates=[2.0, 1.0, 3.0], noise=[1.0, 1.0, -1.0])
    )
    assert g.panel.outcomes[:, 0].tolist() == [5.0, 2.0, 8.0]
    assert g.noiseless[:, 0].tolist() == [4.0, 1.0, 9.0]


def test_drawn_noise_and_components():
    spec = GenerativeSpec(
        n_donors=200, n_times=50, link="cube", noise_sd=0.5, seed=7,
        common_trend=np.arange(50.0), unobserved=UnobservedBlock(link="square", loadings=np.full(50, 2.0)),
    )
    g = generate_panel(spec)
    np.testing.assert_allclose(g.panel.outcomes - g.noiseless, g.eps, atol=1e-12)
    assert g.eps.std() == pytest.approx(0.5, rel=0.05)
    expected = np.arange(50.0)[None, :] + g.Z ** 3 + 2.0 * g.mu[:, None] ** 2
    np.testing.assert_allclose(g.noiseless, expected, rtol=1e-13)
    again = generate_panel(spec)
    assert again.panel == g.panel


def test_treated_in_hull():
    g = generate_panel(GenerativeSpec(n_donors=5, n_times=3, n_covariates=2, treated_in_hull=True, seed=2))
    np.testing.assert_allclose(g.Z[0], g.hull_weights @ g.Z[1:], rtol=1e-14)
    assert g.hull_weights.sum() == pytest.approx(1.0)


def test_custom_sampler_and_export_round_trip():
    spec = GenerativeSpec(n_donors=3, n_times=4, covariate_sampler=lambda rng, shape: rng.uniform(10, 20, shape))
    g = generate_panel(spec)
    assert g.Z.min() >= 10
    assert load_panel(io.StringIO(write_panel(g.panel))) == g.panel


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(noise_sd=-1.0),
        dict(noise_sd=float("nan")),
        dict(n_donors=0),
        dict(n_times=3, time_coeffs=[1.0, 2.0]),
        dict(n_times=3, common_trend=[0.0]),
        dict(n_donors=2, covariates=[1.0, 2.0]),
        dict(n_donors=2, n_times=2, noise=[0.0, 0.0, 0.0]),
        dict(link="sqrt-ish"),
        dict(n_donors=2, unobserved=UnobservedBlock(mu=[1.0])),
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(InvalidSpec):
        GenerativeSpec(**kwargs)


def test_links():
    assert as_link("linear") is LINEAR and LINEAR.linear
    assert power(1).flags == ("linear in disguise",)
    assert GenerativeSpec(link=("power", 1)).flags == ("linear in disguise",)
    assert power(2).flags == () and not power(2).linear
    assert as_link("power(2.5)")(4.0) == 32.0
    assert custom(np.exp, "exp")(0.0) == 1.0
    assert as_link(np.log1p).name == "log1p"


def test_lower_bound_examples():
    assert bias_lower_bound([0.5, 0.5], 2.0, [1.0, 3.0], "square") == 1.0
    assert bias_lower_bound([0.5, 0.5], 2.0, [1.0, 3.0], "cube") == 6.0
    assert bias_lower_bound([0.5, 0.5], 12.0, [11.0, 13.0], "cube") == 36.0
    assert bias_lower_bound([0.25, 0.75], [2.5, 1.0], [[1.0, 3.0], [4.0, 0.0]], "linear") == 0.0


def test_lower_bound_sums_absolute_gaps_over_covariates():
    w, Z1, Z0 = [0.5, 0.5], [2.0, 1.0], [[1.0, 3.0], [0.0, 1.0]]
    np.testing.assert_allclose(bias_gaps(w, Z1, Z0, "square"), [4 - 5, 1 - 0.5])
    assert bias_lower_bound(w, Z1, Z0, "square") == 1.5
    with pytest.raises(DimensionMismatch):
        bias_lower_bound([0.5, 0.5], [1.0, 2.0], [1.0, 3.0], "square")


def test_associativity_gap():
    assert associativity_gap("square", [0.5, 0.5], [1.0, 3.0]) == -1.0
    assert associativity_gap("square", [1.0, 0.0], [1.0, 3.0]) == 0.0
    assert associativity_gap(LINEAR, [0.2, 0.3, 0.5], [4.0, -7.0, 1.5]) == pytest.approx(0.0, abs=1e-15)


weights = st.integers(2, 8).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n),
        st.lists(st.floats(0.1, 20.0), min_size=n, max_size=n),
    )
)


@settings(max_examples=300, deadline=None)
@given(weights, st.sampled_from([2, 3, 4]))
def test_convex_links_give_negative_gaps(wz, p):
    raw, Z = np.array(wz[0]), np.array(wz[1])
    assume(np.ptp(Z) > 1e-3)
    w = raw / raw.sum()
    assert associativity_gap(power(p), w, Z) < 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12), st.integers(1, 4))
def test_bound_is_realized_under_exact_match(seed, J, k):
    g = generate_panel(GenerativeSpec(n_donors=J, n_times=3, n_covariates=k, link="square", treated_in_hull=True, seed=seed))
    w = g.hull_weights
    realized = np.abs(g.panel.outcomes[0] - w @ g.panel.outcomes[1:])
    bound = bias_lower_bound(w, g.Z[0], g.Z[1:].T, "square")
    np.testing.assert_allclose(realized, bound, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(weights, st.floats(0.5, 50.0), st.sampled_from([3, 4]))
def test_translating_covariates_increases_the_bound(wz, shift, p):
    raw, Z0 = np.array(wz[0]), np.array(wz[1])
    assume(np.ptp(Z0) > 0.1)
    w = raw / raw.sum()
    Z1 = w @ Z0
    assert bias_lower_bound(w, Z1 + shift, Z0 + shift, power(p)) > bias_lower_bound(w, Z1, Z0, power(p))


def test_square_link_bound_is_translation_invariant():
    # for p = 2 the gap is the weighted variance of Z, which ignores location
    w, Z0 = np.array([0.3, 0.7]), np.array([1.0, 4.0])
    a = bias_lower_bound(w, w @ Z0, Z0, "square")
    b = bias_lower_bound(w, w @ Z0 + 10.0, Z0 + 10.0, "square")
    assert b == pytest.approx(a, rel=1e-12)


def test_reproduce_examples_report():
    rep = reproduce_examples()
    assert rep.passed
    assert len(rep.claims) >= 25
    assert all(c.abs_error < 1e-12 for c in rep.claims)
    examples = {c.example for c in rep.claims}
    assert examples == {"Example 1", "Example 2", "Example 3", "Example 4", "Example 5", "Appendix A"}
    text = rep.render()
    assert "FAIL" not in text and f"{len(rep.claims)}/{len(rep.claims)} claims pass" in text
    payload = json.loads(rep.to_json())
    assert payload["n_failed"] == 0


def test_report_flags_a_failing_claim():
    rep = reproduce_examples(tol=-1.0)
    assert not rep.passed and "FAIL" in rep.render()
