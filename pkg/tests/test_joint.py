import numpy as np
import pytest

from varjm.data import LongitudinalDataset, Observation, SurvivalRecord
from varjm.joint import (
    JointModelSpec,
    JointParams,
    LongitudinalSubmodel,
    PriorScales,
    SubmodelParams,
    SurvivalParams,
    SurvivalSpec,
    cumulative_hazard,
    log_hazard,
    log_posterior,
    longitudinal_loglik,
    longitudinal_loglik_grad_beta,
    re_log_density,
    survival_loglik,
    survival_loglik_grad,
    trajectory,
)
from varjm.priors import (
    cpc_log_prior,
    cpc_to_corr_chol,
    corr_to_cpc,
    omega_from_raw,
    omega_to_raw,
)
from varjm.splines import BSplineBasis, NaturalCubicBasis
from varjm.terms import Intercept, LinearTime, SplineTime, TrajectoryDesign

IL = TrajectoryDesign((Intercept(), LinearTime()))


def toy_dataset(rng, n=25, grid=None):
    grid = np.asarray(grid if grid is not None else [0, 0.5, 1, 2, 3, 4.0])
    obs, surv = [], []
    for i in range(n):
        sid = f"s{i:03d}"
        b = rng.multivariate_normal([0, 0], [[30.0, -2.0], [-2.0, 4.0]])
        y = 142 + 3 * grid + b[0] + b[1] * grid + 5 * rng.standard_normal(grid.size)
        T = float(rng.uniform(0.8, 5.0))
        keep = grid <= T
        obs.extend(Observation(sid, "marker", float(t), float(v))
                   for t, v in zip(grid[keep], y[keep]))
        surv.append(SurvivalRecord(sid, T, int(rng.uniform() < 0.6)))
    return LongitudinalDataset(obs, surv)


def toy_model(ds, rng, association="current_value"):
    spec = JointModelSpec(
        submodels=(LongitudinalSubmodel("marker", fixed=IL, random=IL,
                                        association=association),),
        survival=SurvivalSpec.from_data(ds, n_basis=6),
    )
    n = ds.n_subjects
    params = JointParams(
        submodels=[SubmodelParams(
            beta=np.array([142.0, 3.0]),
            b=0.5 * rng.standard_normal((n, 2)),
            tau2=25.0,
            Omega=np.array([[30.0, -2.0], [-2.0, 4.0]]),
        )],
        survival=SurvivalParams(
            gamma=np.zeros(0),
            alpha=np.array([0.02]) if association == "current_value" else np.zeros(0),
            spline_coefs=rng.uniform(-3.0, -1.0, 6),
            smooth_sd=1.0,
        ),
    )
    return spec, params


# -- trajectory ------------------------------------------------------------------


def test_trajectory_population_mean_when_re_zero():
    sub = LongitudinalSubmodel("m", fixed=IL, random=IL)
    sp = SubmodelParams(beta=np.array([10.0, 2.0]), b=np.zeros((3, 2)),
                        tau2=1.0, Omega=np.eye(2))
    t = np.array([0.0, 1.0, 2.5])
    np.testing.assert_allclose(trajectory(sub, sp, 1, t), 10.0 + 2.0 * t)


def test_trajectory_linear_arithmetic():
    sub = LongitudinalSubmodel("m", fixed=IL, random=IL)
    sp = SubmodelParams(beta=np.array([142.0, 3.0]),
                        b=np.array([[1.0, -0.5]]), tau2=1.0, Omega=np.eye(2))
    assert trajectory(sub, sp, 0, 2.0)[0] == pytest.approx(142 + 6 + 1 - 1)


def test_trajectory_ncs_is_basis_dot_product():
    rng = np.random.default_rng(4)
    times = np.linspace(0, 5, 60)
    basis = NaturalCubicBasis.from_times(times, df=2)
    design = TrajectoryDesign((Intercept(), SplineTime(basis)))
    sub = LongitudinalSubmodel("m", fixed=design, random=design)
    beta = rng.standard_normal(3)
    b_i = rng.standard_normal(3)
    sp = SubmodelParams(beta=beta, b=b_i[None, :], tau2=1.0, Omega=np.eye(3))
    t = rng.uniform(0, 5, 50)
    direct = (np.column_stack([np.ones(50), basis.design(t)]) @ (beta + b_i))
    np.testing.assert_allclose(trajectory(sub, sp, 0, t), direct, atol=1e-12)


# -- log hazard -------------------------------------------------------------------


def test_log_hazard_zero_coefficients():
    rng = np.random.default_rng(0)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    params.survival.spline_coefs[:] = 0.0
    params.survival.alpha[:] = 0.0
    t = np.array([0.5, 1.5, 3.0])
    np.testing.assert_allclose(log_hazard(spec, params, ds, 0, t), 0.0, atol=1e-12)


def test_log_hazard_spline_only():
    rng = np.random.default_rng(1)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    params.survival.alpha[:] = 0.0
    t = np.array([0.3, 1.1, 2.7])
    expected = spec.survival.baseline.design(t) @ params.survival.spline_coefs
    np.testing.assert_allclose(log_hazard(spec, params, ds, 3, t), expected,
                               atol=1e-12)


def test_log_hazard_matches_direct_expression():
    rng = np.random.default_rng(2)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    for _ in range(20):
        i = int(rng.integers(ds.n_subjects))
        t = float(rng.uniform(0, 4))
        # hand-rolled evaluator
        basis_val = spec.survival.baseline.design(t)[0]
        m_it = (params.submodels[0].beta[0] + params.submodels[0].b[i, 0]
                + (params.submodels[0].beta[1] + params.submodels[0].b[i, 1]) * t)
        direct = basis_val @ params.survival.spline_coefs \
            + params.survival.alpha[0] * m_it
        assert log_hazard(spec, params, ds, i, t)[0] == pytest.approx(direct,
                                                                      abs=1e-10)


# -- cumulative hazard ---------------------------------------------------------------


def test_cumulative_hazard_constant_hazard():
    rng = np.random.default_rng(3)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    params.survival.spline_coefs[:] = 0.0  # h = 1
    params.survival.alpha[:] = 0.0
    for t in (0.5, 1.0, 3.7):
        assert cumulative_hazard(spec, params, ds, 0, t) == pytest.approx(t,
                                                                          abs=1e-10)


def test_cumulative_hazard_weibull_closed_form():
    # log-hazard log κ + (κ-1) log t + ζ integrated through the same
    # fixed-rule quadrature path the model uses
    from varjm.quadrature import quadrature_rule

    kappa, zeta = 1.8**2, -7.0

    def H_quad(t, nodes=15):
        x, w = quadrature_rule(nodes)
        u = 0.5 * t * (x + 1.0)
        logh = np.log(kappa) + (kappa - 1.0) * np.log(np.maximum(u, 1e-300)) + zeta
        return float(0.5 * t * (w @ np.exp(logh)))

    for t in (0.5, 1.0, 5.0):
        assert abs(H_quad(t) - np.exp(zeta) * t**kappa) < 1e-8


def test_cumulative_hazard_vs_trapezoid_oracle():
    rng = np.random.default_rng(5)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    for _ in range(12):
        i = int(rng.integers(ds.n_subjects))
        t = float(rng.uniform(0.5, 4.5))
        mine = cumulative_hazard(spec, params, ds, i, t)
        uu = np.linspace(0, t, 10_001)
        ref = np.trapezoid(np.exp(log_hazard(spec, params, ds, i, uu)), uu)
        assert mine == pytest.approx(ref, rel=1e-6)


def test_cumulative_hazard_monotone():
    rng = np.random.default_rng(6)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    ts = np.sort(rng.uniform(0.1, 4.5, 10))
    H = [cumulative_hazard(spec, params, ds, 2, float(t)) for t in ts]
    assert np.all(np.diff(H) > 0)


# -- log posterior ---------------------------------------------------------------------


def test_separability_when_alpha_zero_flat_priors():
    rng = np.random.default_rng(7)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    spec = JointModelSpec(submodels=spec.submodels, survival=spec.survival,
                          priors=None, quad_nodes=spec.quad_nodes)
    params.survival.alpha[:] = 0.0
    lp = log_posterior(spec, params, ds)
    left = longitudinal_loglik(spec, params, ds) + re_log_density(spec, params)
    right = survival_loglik(spec, params, ds)
    assert lp == pytest.approx(left + right, abs=1e-8)


def test_single_subject_hand_computed():
    obs = [Observation("a", "m", 0.0, 1.5)]
    surv = [SurvivalRecord("a", 1.0, 1)]
    ds = LongitudinalDataset(obs, surv)
    spec = JointModelSpec(
        submodels=(LongitudinalSubmodel(
            "m", fixed=TrajectoryDesign((Intercept(),)),
            random=TrajectoryDesign(()), association="none"),),
        survival=SurvivalSpec(baseline=BSplineBasis(
            degree=0, interior_knots=(), boundary=(0.0, 1.0))),
        priors=None,
    )
    mu, tau2, c = 1.0, 4.0, -0.7  # constant log hazard c
    params = JointParams(
        submodels=[SubmodelParams(beta=np.array([mu]), b=np.zeros((1, 0)),
                                  tau2=tau2, Omega=np.zeros((0, 0)))],
        survival=SurvivalParams(gamma=np.zeros(0), alpha=np.zeros(0),
                                spline_coefs=np.array([c]), smooth_sd=1.0),
    )
    by_hand = (-0.5 * np.log(2 * np.pi * tau2) - 0.5 * (1.5 - mu) ** 2 / tau2
               + c - np.exp(c) * 1.0)
    assert log_posterior(spec, params, ds) == pytest.approx(by_hand, abs=1e-10)


def test_doubling_dataset_doubles_loglik():
    rng = np.random.default_rng(8)
    ds = toy_dataset(rng, n=12)
    spec, params = toy_model(ds, rng)

    # duplicate every subject under a fresh id
    obs2 = ds._all_observations()
    obs2 += [Observation("x" + o.subject_id, o.outcome, o.time, o.value)
             for o in ds._all_observations()]
    surv2 = ds._all_survival()
    surv2 += [SurvivalRecord("x" + r.subject_id, r.event_time, r.status,
                             r.covariates) for r in ds._all_survival()]
    ds2 = LongitudinalDataset(obs2, surv2)
    params2 = JointParams(
        submodels=[SubmodelParams(
            beta=params.submodels[0].beta,
            b=np.vstack([params.submodels[0].b, params.submodels[0].b]),
            tau2=params.submodels[0].tau2,
            Omega=params.submodels[0].Omega,
        )],
        survival=params.survival,
    )
    # identical spline basis on both datasets (duplication preserves times)
    spec2 = JointModelSpec(submodels=spec.submodels, survival=spec.survival,
                           priors=spec.priors, quad_nodes=spec.quad_nodes)
    scales = PriorScales.from_data(spec, ds)
    lp1 = log_posterior(spec, params, ds, scales=scales)
    prior1 = lp1 - (longitudinal_loglik(spec, params, ds)
                    + re_log_density(spec, params)
                    + survival_loglik(spec, params, ds))
    lp2 = log_posterior(spec2, params2, ds2, scales=scales)
    prior2 = lp2 - (longitudinal_loglik(spec2, params2, ds2)
                    + re_log_density(spec2, params2)
                    + survival_loglik(spec2, params2, ds2))
    assert prior1 == pytest.approx(prior2, abs=1e-8)
    assert (lp2 - prior2) == pytest.approx(2 * (lp1 - prior1), abs=1e-6)


def test_out_of_support_returns_minus_inf():
    rng = np.random.default_rng(9)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    params.submodels[0].tau2 = -1.0
    assert log_posterior(spec, params, ds) == -np.inf
    spec2, params2 = toy_model(ds, rng)
    params2.submodels[0].Omega = np.array([[1.0, 2.0], [2.0, 1.0]])  # not PD
    assert log_posterior(spec2, params2, ds) == -np.inf


def test_censored_subject_contributes_minus_H():
    obs = [Observation("a", "m", 0.0, 1.0)]
    surv = [SurvivalRecord("a", 2.0, 0)]
    ds = LongitudinalDataset(obs, surv)
    spec = JointModelSpec(
        submodels=(LongitudinalSubmodel(
            "m", fixed=TrajectoryDesign((Intercept(),)),
            random=TrajectoryDesign(()), association="none"),),
        survival=SurvivalSpec(baseline=BSplineBasis(
            degree=1, interior_knots=(1.0,), boundary=(0.0, 2.0))),
        priors=None,
    )
    params = JointParams(
        submodels=[SubmodelParams(beta=np.array([1.0]), b=np.zeros((1, 0)),
                                  tau2=1.0, Omega=np.zeros((0, 0)))],
        survival=SurvivalParams(gamma=np.zeros(0), alpha=np.zeros(0),
                                spline_coefs=np.array([-1.0, -0.4, -2.0]),
                                smooth_sd=1.0),
    )
    H = cumulative_hazard(spec, params, ds, 0, 2.0)
    assert survival_loglik(spec, params, ds) == pytest.approx(-H, abs=1e-12)


# -- gradients of the two data densities -------------------------------------------


def test_longitudinal_gradient_matches_fd():
    rng = np.random.default_rng(10)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    g = longitudinal_loglik_grad_beta(spec, params, ds, 0)
    for k in range(2):
        h = 1e-5 * max(1.0, abs(params.submodels[0].beta[k]))
        up = toy_model(ds, np.random.default_rng(10))[1]
        dn = toy_model(ds, np.random.default_rng(10))[1]
        up.submodels[0].beta[k] += h
        dn.submodels[0].beta[k] -= h
        fd = (longitudinal_loglik(spec, up, ds)
              - longitudinal_loglik(spec, dn, ds)) / (2 * h)
        assert abs(g[k] - fd) / max(1.0, abs(fd)) < 1e-4


def test_survival_gradient_matches_fd():
    rng = np.random.default_rng(11)
    ds = toy_dataset(rng)
    spec, params = toy_model(ds, rng)
    grads = survival_loglik_grad(spec, params, ds)

    def perturbed(setter, h):
        up = toy_model(ds, np.random.default_rng(11))[1]
        dn = toy_model(ds, np.random.default_rng(11))[1]
        setter(up, +h)
        setter(dn, -h)
        return (survival_loglik(spec, up, ds)
                - survival_loglik(spec, dn, ds)) / (2 * h)

    for j in range(spec.survival.baseline.n_basis):
        fd = perturbed(lambda p, h, j=j: p.survival.spline_coefs.__setitem__(j,
                       p.survival.spline_coefs[j] + h), 1e-6)
        assert abs(grads["spline"][j] - fd) / max(1.0, abs(fd)) < 1e-4
    fd = perturbed(lambda p, h: p.survival.alpha.__setitem__(0,
                   p.survival.alpha[0] + h), 1e-7)
    assert abs(grads["alpha"][0] - fd) / max(1.0, abs(fd)) < 1e-4
    for k in range(2):
        fd = perturbed(lambda p, h, k=k: p.submodels[0].beta.__setitem__(k,
                       p.submodels[0].beta[k] + h), 1e-6)
        assert abs(grads["beta"][0][k] - fd) / max(1.0, abs(fd)) < 1e-4


# -- correlation parametrization ------------------------------------------------------


def test_cpc_roundtrip():
    rng = np.random.default_rng(12)
    for q in (2, 3, 4):
        A = rng.standard_normal((q, 2 * q))
        corr = np.corrcoef(A)
        z = corr_to_cpc(corr)
        L = cpc_to_corr_chol(z, q)
        np.testing.assert_allclose(L @ L.T, corr, atol=1e-10)


def test_omega_raw_roundtrip():
    rng = np.random.default_rng(13)
    A = rng.standard_normal((3, 8))
    Omega = np.cov(A)
    raw = omega_to_raw(Omega)
    L, s = omega_from_raw(raw, 3)
    np.testing.assert_allclose(L @ L.T, Omega, atol=1e-10)


def test_cpc_prior_uniform_correlation_moments():
    # under the uniform prior each off-diagonal correlation of a 3x3 matrix
    # is symmetric-Beta(2) on (-1, 1): variance exactly 1/4
    rng = np.random.default_rng(14)
    n = 40_000
    rho = np.empty((n, 3))
    for k in range(n):
        z = np.arctanh(2 * rng.beta(1.5, 1.5, 2) - 1)
        z2 = np.arctanh(2 * rng.beta(1.0, 1.0, 1) - 1)
        L = cpc_to_corr_chol(np.concatenate([z[:1], z[1:], z2]), 3)
        C = L @ L.T
        rho[k] = [C[1, 0], C[2, 0], C[2, 1]]
    assert np.max(np.abs(rho.mean(axis=0))) < 0.02
    np.testing.assert_allclose(rho.var(axis=0), 0.25, atol=0.01)


def test_cpc_prior_proper():
    # the z-space density integrates to one (2-d case, direct quadrature)
    from scipy.integrate import quad

    val, _ = quad(lambda z: np.exp(cpc_log_prior(np.array([z]), 2)), -30, 30)
    assert val == pytest.approx(1.0, abs=1e-6)
