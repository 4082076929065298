import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedonic.spline import (
    SplineBasis,
    SplineError,
    center_constraint,
    difference_matrix,
    evaluate_basis,
    make_basis,
)


def test_difference_matrix_by_hand():
    expected = np.array([[1, -2, 1, 0], [0, 1, -2, 1]], dtype=float)
    np.testing.assert_array_equal(difference_matrix(4, 2), expected)


def test_penalty_rank_and_null_space():
    b = make_basis(np.linspace(0, 1, 50), k_basis=10, penalty_order=2)
    assert np.linalg.matrix_rank(b.penalty) == 8
    w = np.linalg.eigvalsh(b.penalty)
    assert np.sum(w < 1e-10) == 2
    assert np.all(w > -1e-12)
    np.testing.assert_allclose(b.penalty, b.penalty.T)


@pytest.mark.parametrize("c", [np.ones(10), np.arange(1.0, 11.0), 3.0 - 0.5 * np.arange(10)])
def test_affine_coefficients_are_unpenalized(c):
    b = make_basis(np.linspace(-2, 5, 40), k_basis=10)
    assert abs(c @ b.penalty @ c) < 1e-10


def test_hat_functions_at_span_midpoint():
    # degree 1 with two uniform spans on [0, 2]; hand-evaluated hats at x=0.5
    basis = SplineBasis(1, 3, np.array([0.0, 0.0, 1.0, 2.0, 2.0]), (0.0, 2.0), 1,
                        difference_matrix(3, 1).T @ difference_matrix(3, 1))
    row = evaluate_basis(basis, [0.5])[0]
    np.testing.assert_allclose(row, [0.5, 0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(evaluate_basis(basis, [1.0])[0], [0.0, 1.0, 0.0], atol=1e-15)


def test_uniform_cubic_boundary_values():
    b = make_basis(np.linspace(0, 1, 30), k_basis=8)
    row = evaluate_basis(b, [0.0])[0]
    np.testing.assert_allclose(row[:3], [1 / 6, 2 / 3, 1 / 6], atol=1e-14)
    assert np.all(row[3:] == 0)


def test_quantile_knots_interpolate_at_domain_minimum(rng):
    x = rng.lognormal(size=200)
    b = make_basis(x, k_basis=10, knot_placement="quantile")
    row = evaluate_basis(b, [x.min()])[0]
    assert row[0] == pytest.approx(1.0)
    assert np.all(row[1:] == 0)
    assert np.all(np.diff(b.knots) >= 0)


def test_too_few_distinct_values():
    with pytest.raises(SplineError, match="linear"):
        make_basis(np.array([1.0, 2.0, 3.0] * 10), k_basis=10)


def test_out_of_domain_clamped_with_warning():
    b = make_basis(np.linspace(0, 1, 30), k_basis=8)
    with pytest.warns(RuntimeWarning, match="clamped"):
        out = evaluate_basis(b, [-1.0, 2.0])
    np.testing.assert_array_equal(out, evaluate_basis(b, [0.0, 1.0]))


def test_roundtrip_dict():
    b = make_basis(np.linspace(3, 9, 25), k_basis=7)
    again = SplineBasis.from_dict(b.to_dict())
    x = np.linspace(3, 9, 13)
    np.testing.assert_array_equal(evaluate_basis(b, x), evaluate_basis(again, x))
    np.testing.assert_array_equal(b.penalty, again.penalty)


@pytest.mark.parametrize("placement", ["uniform", "quantile"])
def test_partition_of_unity_and_local_support(rng, placement):
    data = rng.gamma(2.0, size=300)
    b = make_basis(data, k_basis=12, knot_placement=placement)
    x = rng.uniform(data.min(), data.max(), size=1000)
    m = evaluate_basis(b, x)
    assert np.max(np.abs(m.sum(axis=1) - 1.0)) < 1e-10
    assert np.max(np.count_nonzero(m, axis=1)) <= b.degree + 1
    assert np.all(m >= -1e-15)


def test_centering_sums_to_zero(rng):
    x = rng.uniform(size=80)
    b = make_basis(x, k_basis=10)
    cb = center_constraint(evaluate_basis(b, x), b.penalty)
    assert cb.matrix.shape == (80, 9)
    assert np.linalg.matrix_rank(cb.transform) == 9
    for _ in range(5):
        coef = rng.normal(size=9)
        assert abs((cb.matrix @ coef).sum()) < 1e-8
    np.testing.assert_allclose(cb.penalty, cb.transform.T @ b.penalty @ cb.transform)


def test_centered_fit_matches_direct_constrained_fit(rng):
    # oracle: Lagrangian least squares with the constraint 1'B c = 0
    x = np.sort(rng.uniform(size=50))
    y = np.sin(4 * x) + rng.normal(scale=0.1, size=50)
    yc = y - y.mean()
    b = make_basis(x, k_basis=8)
    B = evaluate_basis(b, x)
    cb = center_constraint(B)
    coef, *_ = np.linalg.lstsq(cb.matrix, yc, rcond=None)
    via_transform = cb.transform @ coef

    C = B.sum(axis=0)[None, :]
    kkt = np.block([[B.T @ B, C.T], [C, np.zeros((1, 1))]])
    rhs = np.concatenate([B.T @ yc, [0.0]])
    direct = np.linalg.solve(kkt, rhs)[:8]
    np.testing.assert_allclose(B @ via_transform, B @ direct, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 15), st.integers(1, 3),
       st.lists(st.floats(-10, 10, allow_nan=False), min_size=15, max_size=15))
def test_penalty_quadratic_form_equals_squared_differences(k, order, raw):
    c = np.array(raw[:k])
    d = difference_matrix(k, order)
    direct = np.sum(np.diff(c, n=order) ** 2)
    assert abs(c @ (d.T @ d) @ c - direct) <= 1e-12 * max(1.0, direct) * 100


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 14), st.integers(1, 3))
def test_partition_of_unity_property(seed, k, degree):
    r = np.random.default_rng(seed)
    data = r.normal(size=60)
    if k <= degree:
        return
    b = make_basis(data, k_basis=k, degree=degree)
    m = evaluate_basis(b, r.uniform(data.min(), data.max(), size=200))
    assert np.max(np.abs(m.sum(axis=1) - 1.0)) < 1e-10
