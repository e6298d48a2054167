import numpy as np
import pytest
from scipy.interpolate import splev

from varjm.splines import BSplineBasis, NaturalCubicBasis, penalty


def scipy_bspline_design(basis, t):
    """Oracle: evaluate each basis function through scipy's splev."""
    aug = np.concatenate([
        np.full(basis.degree + 1, basis.boundary[0]),
        np.asarray(basis.interior_knots),
        np.full(basis.degree + 1, basis.boundary[1]),
    ])
    n = basis.n_basis
    out = np.zeros((len(t), n))
    for j in range(n):
        coefs = np.zeros(n)
        coefs[j] = 1.0
        out[:, j] = splev(t, (aug, coefs, basis.degree))
    return out


def test_partition_of_unity():
    rng = np.random.default_rng(7)
    basis = BSplineBasis(degree=3, interior_knots=(1.0, 2.5, 4.0), boundary=(0.0, 5.0))
    t = rng.uniform(0.0, 5.0, size=1000)
    sums = basis.design(t).sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-10


def test_degree_zero_indicator():
    basis = BSplineBasis(degree=0, interior_knots=(0.5,), boundary=(0.0, 1.0))
    np.testing.assert_array_equal(basis.design(0.25)[0], [1.0, 0.0])
    np.testing.assert_array_equal(basis.design(0.75)[0], [0.0, 1.0])


def test_matches_scipy_at_knots_and_random_points():
    basis = BSplineBasis(degree=3, interior_knots=(1.0, 2.0, 3.0, 4.0), boundary=(0.0, 5.0))
    rng = np.random.default_rng(11)
    t = np.concatenate([np.array([1.0, 2.0, 3.0, 4.0]), rng.uniform(0, 5, 50)])
    mine = basis.design(t)
    oracle = scipy_bspline_design(basis, t)
    np.testing.assert_allclose(mine, oracle, atol=1e-12)


def test_degree_one_closed_form():
    # hat functions: degree-1 basis at midpoint of its support equals 1
    basis = BSplineBasis(degree=1, interior_knots=(0.5,), boundary=(0.0, 1.0))
    row = basis.design(0.5)[0]
    np.testing.assert_allclose(row, [0.0, 1.0, 0.0], atol=1e-14)
    row = basis.design(0.25)[0]
    np.testing.assert_allclose(row, [0.5, 0.5, 0.0], atol=1e-14)


def test_local_support():
    basis = BSplineBasis(degree=3, interior_knots=(1.0, 2.0, 3.0, 4.0), boundary=(0.0, 5.0))
    aug = np.concatenate([np.zeros(4), [1.0, 2.0, 3.0, 4.0], np.full(4, 5.0)])
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 5, 200)
    design = basis.design(t)
    for j in range(basis.n_basis):
        lo, hi = aug[j], aug[j + basis.degree + 1]
        outside = (t < lo) | (t > hi)
        assert np.all(design[outside, j] == 0.0)


def test_clamping_outside_boundary():
    basis = BSplineBasis(degree=3, interior_knots=(2.0,), boundary=(0.0, 5.0))
    np.testing.assert_array_equal(basis.design(-1.0), basis.design(0.0))
    np.testing.assert_array_equal(basis.design(7.0), basis.design(5.0))


def test_non_finite_rejected():
    basis = BSplineBasis(degree=3, interior_knots=(), boundary=(0.0, 1.0))
    with pytest.raises(ValueError):
        basis.design(np.nan)
    ncs = NaturalCubicBasis((0.0, 1.0))
    with pytest.raises(ValueError):
        ncs.design(np.inf)


def test_derivative_matches_finite_difference():
    basis = BSplineBasis(degree=3, interior_knots=(1.5, 3.0), boundary=(0.0, 5.0))
    t = np.array([0.7, 1.5, 2.2, 4.4])
    h = 1e-6
    fd = (basis.design(t + h) - basis.design(t - h)) / (2 * h)
    np.testing.assert_allclose(basis.design_derivative(t, 1), fd, atol=1e-6)


# -- natural cubic splines ---------------------------------------------------


def test_ncs_linear_beyond_boundary():
    basis = NaturalCubicBasis.from_times(np.linspace(0, 5, 40), df=3)
    h = 0.05
    for t0 in (5.5, 6.0, 8.0):
        second = (basis.design(t0 + h) - 2 * basis.design(t0) + basis.design(t0 - h)) / h**2
        assert np.max(np.abs(second)) < 1e-6
    for t0 in (-3.0, -0.4):
        second = (basis.design(t0 + h) - 2 * basis.design(t0) + basis.design(t0 - h)) / h**2
        assert np.max(np.abs(second)) < 1e-6


def test_ncs_natural_constraint_inside():
    # second derivative of every basis function tends to zero at the boundary knots
    basis = NaturalCubicBasis.from_times(np.linspace(0, 5, 40), df=4)
    h = 1e-4
    for b in (0.0 + h, 5.0 - h):
        second = (basis.design(b + h) - 2 * basis.design(b) + basis.design(b - h)) / h**2
        assert np.max(np.abs(second)) < 1e-2


def test_ncs_df1_equivalent_to_linear_regression():
    rng = np.random.default_rng(5)
    t = rng.uniform(0, 5, 80)
    y = 2.0 + 0.7 * t + rng.normal(0, 0.3, t.size)
    basis = NaturalCubicBasis.from_times(t, df=1)
    X1 = np.column_stack([np.ones(t.size), basis.design(t)[:, 0]])
    X2 = np.column_stack([np.ones(t.size), t])
    fit1 = X1 @ np.linalg.lstsq(X1, y, rcond=None)[0]
    fit2 = X2 @ np.linalg.lstsq(X2, y, rcond=None)[0]
    np.testing.assert_allclose(fit1, fit2, atol=1e-10)


def test_ncs_continuous_at_boundary_knots():
    basis = NaturalCubicBasis.from_times(np.linspace(0, 5, 30), df=3)
    eps = 1e-9
    for b in (0.0, 5.0):
        left = basis.design(b - eps)
        right = basis.design(b + eps)
        at = basis.design(b)
        assert np.max(np.abs(left - at)) < 1e-7
        assert np.max(np.abs(right - at)) < 1e-7
        assert np.max(np.abs(left - right)) < 1e-7


def test_ncs_full_column_rank():
    rng = np.random.default_rng(9)
    for df in (1, 2, 3, 5):
        basis = NaturalCubicBasis.from_times(np.linspace(0, 5, 50), df=df)
        t = rng.uniform(0, 5, 60)
        design = basis.design(t)
        assert design.shape[1] == df
        assert np.linalg.matrix_rank(design) == df


# -- difference penalty -------------------------------------------------------


def test_penalty_rank_and_null_space():
    pen = penalty(order=2, size=4)
    assert np.linalg.matrix_rank(pen.matrix) == 2
    const = np.ones(4)
    ramp = np.arange(1.0, 5.0)
    assert abs(pen.quadratic_form(const)) < 1e-12
    assert abs(pen.quadratic_form(ramp)) < 1e-12


def test_penalty_constant_zero():
    pen = penalty(order=1, size=6)
    assert pen.quadratic_form(np.full(6, 3.7)) == 0.0


def test_penalty_hand_computed():
    # D = [[-1,1,0],[0,-1,1]]; DᵀD quadratic form of (0,1,0) is 1+1 = 2
    pen = penalty(order=1, size=3)
    assert pen.quadratic_form(np.array([0.0, 1.0, 0.0])) == pytest.approx(2.0)


def test_penalty_size_validation():
    with pytest.raises(ValueError):
        penalty(order=3, size=3)


def test_penalty_symmetric_psd():
    pen = penalty(order=2, size=9)
    np.testing.assert_array_equal(pen.matrix, pen.matrix.T)
    assert np.all(np.linalg.eigvalsh(pen.matrix) > -1e-12)
