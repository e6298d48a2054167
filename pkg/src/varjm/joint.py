"""Multivariate joint model: longitudinal submodels linked to a hazard.

Each longitudinal submodel is a Gaussian mixed model; the proportional-
hazards submodel couples to the current value of every associated
submodel's mean function, on top of a penalized B-spline log baseline
hazard and optional baseline covariates. This module holds the model
specification and a direct (per-subject) evaluation of every density the
sampler needs; the vectorized evaluation lives in ``target``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LongitudinalDataset
from .priors import (
    PriorSet,
    log_halfnormal_density,
    log_normal_density,
    SplinePrior,
)
from .quadrature import quadrature_rule
from .splines import BSplineBasis
from .terms import TrajectoryDesign

__all__ = [
    "LongitudinalSubmodel",
    "SurvivalSpec",
    "JointModelSpec",
    "SubmodelParams",
    "SurvivalParams",
    "JointParams",
    "PriorScales",
    "trajectory",
    "log_hazard",
    "cumulative_hazard",
    "longitudinal_loglik",
    "re_log_density",
    "survival_loglik",
    "log_prior",
    "log_posterior",
]


@dataclass(frozen=True)
class LongitudinalSubmodel:
    outcome: str
    fixed: TrajectoryDesign
    random: TrajectoryDesign
    association: str = "current_value"

    def __post_init__(self):
        if self.association not in ("current_value", "none"):
            raise ValueError(f"unknown association {self.association!r}")
        if not self.random.is_subset_of(self.fixed):
            raise ValueError("random terms must be a subset of the fixed terms")


@dataclass(frozen=True)
class SurvivalSpec:
    baseline: BSplineBasis
    covariates: tuple[str, ...] = ()

    @classmethod
    def from_data(cls, ds: LongitudinalDataset, covariates=(), n_basis: int = 9,
                  degree: int = 3) -> "SurvivalSpec":
        """Baseline basis with interior knots at quantiles of event times."""
        events = ds.event_time[ds.status == 1]
        anchor = events if events.size >= n_basis else ds.event_time
        basis = BSplineBasis.from_quantiles(
            anchor, n_basis=n_basis, degree=degree,
            boundary=(0.0, float(ds.event_time.max())),
        )
        return cls(baseline=basis, covariates=tuple(covariates))


@dataclass(frozen=True)
class JointModelSpec:
    submodels: tuple[LongitudinalSubmodel, ...]
    survival: SurvivalSpec
    priors: PriorSet | None = field(default_factory=PriorSet)  # None = flat
    # None: GK15 on each inter-knot segment of [0, t]. The spline hazard is
    # analytic between knots, so this is exact to machine precision; a single
    # panel across knots leaves visible error for rough coefficients.
    # An integer selects a fixed rule (15 = one GK15 panel, else Gauss-
    # Legendre of that order).
    quad_nodes: int | None = None

    def __post_init__(self):
        if not self.submodels:
            raise ValueError("need at least one longitudinal submodel")
        names = [s.outcome for s in self.submodels]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate submodel outcomes {names}")

    @property
    def associated(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.submodels)
                     if s.association == "current_value")


@dataclass
class SubmodelParams:
    beta: np.ndarray
    b: np.ndarray      # (n_subjects, q)
    tau2: float
    Omega: np.ndarray  # (q, q)


@dataclass
class SurvivalParams:
    gamma: np.ndarray       # baseline-covariate coefficients
    alpha: np.ndarray       # one per associated submodel, in spec order
    spline_coefs: np.ndarray
    smooth_sd: float = 1.0


@dataclass
class JointParams:
    submodels: list[SubmodelParams]
    survival: SurvivalParams


@dataclass(frozen=True)
class PriorScales:
    """Data-derived standardization factors for the prior SDs."""

    outcome_sd: tuple[float, ...]          # per submodel
    coef_scale: tuple[np.ndarray, ...]     # per submodel, per fixed column
    re_scale: tuple[np.ndarray, ...]       # per submodel, per random column
    cov_scale: np.ndarray                  # per survival covariate
    assoc_scale: np.ndarray                # per associated submodel

    @classmethod
    def from_data(cls, spec: JointModelSpec, ds: LongitudinalDataset) -> "PriorScales":
        outcome_sd, coef_scale, re_scale = [], [], []
        for sub in spec.submodels:
            _, t, y = ds.observation_arrays(sub.outcome)
            sd_y = float(np.std(y)) or 1.0
            outcome_sd.append(sd_y)
            coef_scale.append(sd_y / _column_scales(sub.fixed.design(t)))
            re_scale.append(sd_y / _column_scales(sub.random.design(t)))
        cov_scale = np.ones(len(spec.survival.covariates))
        for k, name in enumerate(spec.survival.covariates):
            col = ds.covariates[:, ds.covariate_names.index(name)]
            cov_scale[k] = 1.0 / (float(np.std(col)) or 1.0)
        assoc_scale = np.array([1.0 / outcome_sd[i] for i in spec.associated])
        return cls(
            outcome_sd=tuple(outcome_sd),
            coef_scale=tuple(coef_scale),
            re_scale=tuple(re_scale),
            cov_scale=cov_scale,
            assoc_scale=assoc_scale,
        )


def _column_scales(design: np.ndarray) -> np.ndarray:
    sd = design.std(axis=0)
    return np.where(sd > 1e-12, sd, 1.0)


# -- model functions ----------------------------------------------------------


def trajectory(sub: LongitudinalSubmodel, sp: SubmodelParams, subject_idx: int, t):
    """Current value of the submodel mean for one subject."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return sub.fixed.design(t) @ sp.beta + sub.random.design(t) @ sp.b[subject_idx]


def log_hazard(spec: JointModelSpec, params: JointParams, ds: LongitudinalDataset,
               subject_idx: int, t):
    """Σ_p γ_p B_p(t) + γᵀwᵢ + Σ_assoc α·current_value(t)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    sv = params.survival
    out = spec.survival.baseline.design(t) @ sv.spline_coefs
    if spec.survival.covariates:
        w = np.array([
            ds.covariates[subject_idx, ds.covariate_names.index(c)]
            for c in spec.survival.covariates
        ])
        out = out + float(w @ sv.gamma)
    for a, i in enumerate(spec.associated):
        out = out + sv.alpha[a] * trajectory(
            spec.submodels[i], params.submodels[i], subject_idx, t)
    return out


def survival_quadrature(spec: JointModelSpec, t: float,
                        n_nodes: int | None = None):
    """Quadrature nodes and weights on [0, t] for the survival integral."""
    n_nodes = spec.quad_nodes if n_nodes is None else n_nodes
    if n_nodes is not None:
        x, w = quadrature_rule(n_nodes)
        return 0.5 * t * (x + 1.0), 0.5 * t * w
    from .quadrature import _GK15_NODES, _GK15_WEIGHTS

    interior = [k for k in spec.survival.baseline.interior_knots if 0.0 < k < t]
    edges = np.array([0.0, *interior, t])
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * _GK15_NODES).ravel()
    weights = (half[:, None] * np.broadcast_to(_GK15_WEIGHTS, (half.size, 15))).ravel()
    return nodes, weights


def cumulative_hazard(spec: JointModelSpec, params: JointParams,
                      ds: LongitudinalDataset, subject_idx: int, t: float,
                      n_nodes: int | None = None) -> float:
    """∫₀ᵗ h(u) du: GK15 per inter-knot segment, or a fixed override rule."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return 0.0
    nodes, w = survival_quadrature(spec, t, n_nodes)
    logh = log_hazard(spec, params, ds, subject_idx, nodes)
    if not np.all(np.isfinite(logh)):
        raise ValueError("non-finite hazard integrand")
    return float(w @ np.exp(logh))


def longitudinal_loglik(spec: JointModelSpec, params: JointParams,
                        ds: LongitudinalDataset) -> float:
    """Gaussian observation density over all submodels."""
    total = 0.0
    for sub, sp in zip(spec.submodels, params.submodels):
        if sp.tau2 <= 0:
            return -np.inf
        sidx, t, y = ds.observation_arrays(sub.outcome)
        mu = sub.fixed.design(t) @ sp.beta + np.sum(
            sub.random.design(t) * sp.b[sidx], axis=1)
        total += float(
            -0.5 * y.size * np.log(2 * np.pi * sp.tau2)
            - 0.5 * np.sum((y - mu) ** 2) / sp.tau2
        )
    return total


def re_log_density(spec: JointModelSpec, params: JointParams) -> float:
    """Gaussian density of the subject random effects given their covariances."""
    total = 0.0
    for sp in params.submodels:
        q = sp.Omega.shape[0]
        if q == 0:
            continue
        try:
            L = np.linalg.cholesky(sp.Omega)
        except np.linalg.LinAlgError:
            return -np.inf
        n = sp.b.shape[0]
        v = np.linalg.solve(L, sp.b.T)
        total += float(
            -0.5 * n * q * np.log(2 * np.pi)
            - n * np.sum(np.log(np.diag(L)))
            - 0.5 * np.sum(v**2)
        )
    return total


def survival_loglik(spec: JointModelSpec, params: JointParams,
                    ds: LongitudinalDataset) -> float:
    """Σᵢ δᵢ log hᵢ(Tᵢ) − Hᵢ(Tᵢ)."""
    total = 0.0
    for i in range(ds.n_subjects):
        T = float(ds.event_time[i])
        H = cumulative_hazard(spec, params, ds, i, T)
        if ds.status[i] == 1:
            total += float(log_hazard(spec, params, ds, i, T)[0])
        total -= H
    return total


def log_prior(spec: JointModelSpec, params: JointParams,
              scales: PriorScales) -> float:
    """Proper prior density on the natural parameter scale."""
    priors = spec.priors
    if priors is None:
        return 0.0
    lp = 0.0
    for m, (sub, sp) in enumerate(zip(spec.submodels, params.submodels)):
        lp += log_normal_density(sp.beta, priors.coef_sd * scales.coef_scale[m])
        if sp.tau2 <= 0:
            return -np.inf
        lp += log_halfnormal_density(
            np.sqrt(sp.tau2), priors.sd_scale * scales.outcome_sd[m])
        q = sp.Omega.shape[0]
        if q:
            w = np.linalg.eigvalsh(sp.Omega)
            if np.any(w <= 0):
                return -np.inf
            sds = np.sqrt(np.diag(sp.Omega))
            lp += log_halfnormal_density(sds, priors.sd_scale * scales.re_scale[m])
            # uniform correlation prior: constant over the valid region
    sv = params.survival
    if sv.gamma.size:
        lp += log_normal_density(sv.gamma, priors.coef_sd * scales.cov_scale)
    if sv.alpha.size:
        lp += log_normal_density(sv.alpha, priors.coef_sd * scales.assoc_scale)
    spr = SplinePrior(sv.spline_coefs.size, priors.rw_order, priors.coef_sd)
    lp += spr.log_density(sv.spline_coefs, sv.smooth_sd)
    lp += log_halfnormal_density(sv.smooth_sd, priors.smooth_sd_scale)
    return float(lp)


def log_posterior(spec: JointModelSpec, params: JointParams,
                  ds: LongitudinalDataset, scales: PriorScales | None = None) -> float:
    """Full joint log posterior; −∞ outside the support."""
    if scales is None and spec.priors is not None:
        scales = PriorScales.from_data(spec, ds)
    ll = longitudinal_loglik(spec, params, ds)
    if not np.isfinite(ll):
        return -np.inf
    re = re_log_density(spec, params)
    if not np.isfinite(re):
        return -np.inf
    lp = log_prior(spec, params, scales) if spec.priors is not None else 0.0
    if not np.isfinite(lp):
        return -np.inf
    return ll + re + survival_loglik(spec, params, ds) + lp


# -- analytic gradients of the two data densities (used by property tests) ----


def longitudinal_loglik_grad_beta(spec, params, ds, m: int) -> np.ndarray:
    sub, sp = spec.submodels[m], params.submodels[m]
    sidx, t, y = ds.observation_arrays(sub.outcome)
    X = sub.fixed.design(t)
    mu = X @ sp.beta + np.sum(sub.random.design(t) * sp.b[sidx], axis=1)
    return X.T @ (y - mu) / sp.tau2


def survival_loglik_grad(spec, params, ds) -> dict:
    """Gradient wrt spline coefs, covariate coefs, associations, and betas."""
    sv = params.survival
    basis = spec.survival.baseline
    g_spline = np.zeros_like(sv.spline_coefs)
    g_gamma = np.zeros_like(sv.gamma)
    g_alpha = np.zeros_like(sv.alpha)
    g_beta = [np.zeros_like(sp.beta) for sp in params.submodels]
    for i in range(ds.n_subjects):
        T = float(ds.event_time[i])
        nodes, om = survival_quadrature(spec, T)
        h = np.exp(log_hazard(spec, params, ds, i, nodes))
        Bq = basis.design(nodes)
        wcov = np.array([
            ds.covariates[i, ds.covariate_names.index(c)]
            for c in spec.survival.covariates
        ])
        cur = [trajectory(spec.submodels[k], params.submodels[k], i, nodes)
               for k in spec.associated]
        curT = [trajectory(spec.submodels[k], params.submodels[k], i, np.array([T]))[0]
                for k in spec.associated]
        g_spline -= (om * h) @ Bq
        if wcov.size:
            g_gamma -= float(np.sum(om * h)) * wcov
        for a, k in enumerate(spec.associated):
            g_alpha[a] -= float(np.sum(om * h * cur[a]))
            Xk = spec.submodels[k].fixed.design(nodes)
            g_beta[k] -= sv.alpha[a] * ((om * h) @ Xk)
        if ds.status[i] == 1:
            g_spline += basis.design(T)[0]
            if wcov.size:
                g_gamma += wcov
            for a, k in enumerate(spec.associated):
                g_alpha[a] += curT[a]
                g_beta[k] += sv.alpha[a] * spec.submodels[k].fixed.design(T)[0]
    return {"spline": g_spline, "gamma": g_gamma, "alpha": g_alpha, "beta": g_beta}
