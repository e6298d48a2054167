"""Linear mixed models by profiled (restricted) maximum likelihood.

The random-effect covariance is parametrized as Σ = σ²·G with G = LLᵀ and L
a lower-triangular Cholesky factor whose diagonal is stored on the log
scale; the residual variance σ² is profiled out in closed form. The
profiled deviance and its analytic gradient are evaluated per subject with
batched linear algebra (subjects grouped by observation count), and
minimized by L-BFGS-B with a method-of-moments start plus an identity
restart.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import LongitudinalDataset, Observation
from .terms import TrajectoryDesign

logger = logging.getLogger(__name__)

__all__ = [
    "LmmSpec",
    "LmmFit",
    "ResidualSeries",
    "LmmError",
    "SingularDesignError",
    "ConvergenceError",
    "fit_lmm",
    "empirical_bayes",
    "residuals",
    "variability_dataset",
]


class LmmError(RuntimeError):
    pass


class SingularDesignError(LmmError):
    def __init__(self, collinear_terms):
        self.collinear_terms = tuple(collinear_terms)
        super().__init__(f"singular fixed-effect design; collinear terms: {self.collinear_terms}")


class ConvergenceError(LmmError):
    def __init__(self, message, theta, grad_norm, n_iter):
        self.theta = theta
        self.grad_norm = grad_norm
        self.n_iter = n_iter
        super().__init__(f"{message} (iterations={n_iter}, grad_norm={grad_norm:.3e})")


@dataclass(frozen=True)
class LmmSpec:
    """Fixed and random time designs for one longitudinal outcome."""

    fixed: TrajectoryDesign
    random: TrajectoryDesign
    outcome: str = "marker"

    def __post_init__(self):
        if not self.fixed.has_intercept():
            raise ValueError("fixed design must include an intercept")
        if not self.random.is_subset_of(self.fixed):
            raise ValueError("random terms must be a subset of the fixed terms")


@dataclass
class LmmFit:
    spec: LmmSpec
    method: str
    beta: np.ndarray
    beta_se: np.ndarray
    beta_names: tuple[str, ...]
    Sigma: np.ndarray
    sigma2: float
    b: np.ndarray  # (n_subjects, q) empirical Bayes estimates
    subject_ids: tuple[str, ...]
    loglik: float
    n_iter: int
    grad_norm: float
    objective_path: np.ndarray = field(repr=False, default=None)
    theta: np.ndarray = field(repr=False, default=None)


@dataclass
class ResidualSeries:
    """Per-observation deviations from the fitted subject trajectories."""

    outcome: str
    subject_idx: np.ndarray
    subject_ids: tuple[str, ...]
    time: np.ndarray
    raw: np.ndarray

    @property
    def squared(self) -> np.ndarray:
        return self.raw**2

    @property
    def absolute(self) -> np.ndarray:
        return np.abs(self.raw)

    def values(self, kind: str) -> np.ndarray:
        if kind not in ("raw", "squared", "absolute"):
            raise ValueError(f"unknown residual kind {kind!r}")
        return getattr(self, kind)


# -- packed per-subject designs ---------------------------------------------


@dataclass
class _Group:
    subj: np.ndarray   # (m,) subject indices
    y: np.ndarray      # (m, k)
    X: np.ndarray      # (m, k, p)
    Z: np.ndarray      # (m, k, q)


@dataclass
class _Packed:
    groups: list[_Group]
    n_obs: int
    n_subjects: int
    p: int
    q: int


def _pack(ds: LongitudinalDataset, spec: LmmSpec) -> _Packed:
    sidx, time, y = ds.observation_arrays(spec.outcome)
    X = spec.fixed.design(time)
    Z = spec.random.design(time)
    counts = np.bincount(sidx, minlength=ds.n_subjects)
    present = np.flatnonzero(counts)
    starts = np.concatenate([[0], np.cumsum(counts)])[:-1]
    groups = []
    for k in np.unique(counts[present]):
        subj = present[counts[present] == k]
        m = subj.size
        rows = (starts[subj][:, None] + np.arange(k)[None, :]).ravel()
        groups.append(_Group(
            subj=subj,
            y=y[rows].reshape(m, k),
            X=X[rows].reshape(m, k, X.shape[1]),
            Z=Z[rows].reshape(m, k, Z.shape[1]),
        ))
    return _Packed(groups=groups, n_obs=y.size, n_subjects=ds.n_subjects,
                   p=X.shape[1], q=Z.shape[1])


def _theta_to_chol(theta: np.ndarray, q: int) -> np.ndarray:
    L = np.zeros((q, q))
    k = 0
    for a in range(q):
        for b in range(a + 1):
            L[a, b] = np.exp(theta[k]) if a == b else theta[k]
            k += 1
    return L


def _chol_to_theta(L: np.ndarray) -> np.ndarray:
    q = L.shape[0]
    out = []
    for a in range(q):
        for b in range(a + 1):
            out.append(np.log(max(L[a, a], 1e-12)) if a == b else L[a, b])
    return np.array(out)


def _deviance_and_grad(theta, packed: _Packed, reml: bool):
    """Profiled deviance, its analytic θ-gradient, and the GLS solution."""
    p, q = packed.p, packed.q
    L = _theta_to_chol(theta, q)
    G = L @ L.T

    A = np.zeros((p, p))
    c = np.zeros(p)
    ld = 0.0
    per_group = []
    for g in packed.groups:
        k = g.y.shape[1]
        W = np.eye(k) + np.einsum("mkq,qr,mlr->mkl", g.Z, G, g.Z)
        Lw = np.linalg.cholesky(W)
        ld += 2.0 * float(np.log(np.einsum("mkk->mk", Lw)).sum())
        rhs = np.concatenate([g.X, g.y[:, :, None], g.Z], axis=2)
        sol = np.linalg.solve(W, rhs)
        WiX, Wiy, WiZ = sol[:, :, :p], sol[:, :, p], sol[:, :, p + 1:]
        A += np.einsum("mkp,mkr->pr", g.X, WiX)
        c += np.einsum("mkp,mk->p", WiX, g.y)
        per_group.append((g, WiX, Wiy, WiZ))

    sign, ldA = np.linalg.slogdet(A)
    if sign <= 0:
        raise SingularDesignError(_collinear_names(A))
    beta = np.linalg.solve(A, c)
    Ainv = np.linalg.inv(A)

    rss = 0.0
    S = np.zeros((q, q))
    Gg = np.zeros((q, q))
    M = np.zeros((q, q))
    ghat = []  # per-group Zᵀ W⁻¹ r, reused for empirical Bayes
    for g, WiX, Wiy, WiZ in per_group:
        r = g.y - g.X @ beta
        Wir = Wiy - WiX @ beta
        rss += float(np.einsum("mk,mk->", r, Wir))
        S += np.einsum("mki,mkj->ij", g.Z, WiZ)
        gi = np.einsum("mki,mk->mi", g.Z, Wir)
        ghat.append(gi)
        Gg += gi.T @ gi
        K = np.einsum("mki,mkp->mip", g.Z, WiX)
        M += np.einsum("mip,pr,mjr->ij", K, Ainv, K)

    df = packed.n_obs - p if reml else packed.n_obs
    # exact-fit data give rss = 0; floor it so the deviance stays finite and
    # drop the rss-gradient term, which is then pure rounding noise
    exact_fit = rss < 1e-200
    rss = max(rss, 1e-200)
    dev = ld + df * (1.0 + np.log(2.0 * np.pi * rss / df))
    if reml:
        dev += ldA

    T = S - (0.0 if exact_fit else df / rss) * Gg
    if reml:
        T -= M
    TL = T @ L
    grad = []
    for a in range(q):
        for b in range(a + 1):
            grad.append(2.0 * L[a, a] * TL[a, a] if a == b else 2.0 * TL[a, b])
    grad = np.array(grad)

    sigma2 = rss / df
    return dev, grad, beta, Ainv, sigma2, ghat, G


def _collinear_names(A):
    w, v = np.linalg.eigh(A)
    null = v[:, np.abs(w) <= 1e-10 * max(1.0, np.abs(w).max())]
    involved = np.unique(np.nonzero(np.abs(null) > 1e-6)[0])
    return tuple(int(i) for i in involved)


def _initial_theta(packed: _Packed) -> np.ndarray:
    """Method-of-moments start: per-subject OLS coefficient spread."""
    q = packed.q
    coefs, ssr, dof = [], 0.0, 0
    for g in packed.groups:
        k = g.y.shape[1]
        if k < q + 1:
            continue
        for m in range(g.y.shape[0]):
            cm, res, rank, _ = np.linalg.lstsq(g.Z[m], g.y[m], rcond=None)
            if rank < q:
                continue
            coefs.append(cm)
            ssr += float(np.sum((g.y[m] - g.Z[m] @ cm) ** 2))
            dof += k - q
    if len(coefs) < q + 1 or dof == 0:
        return _chol_to_theta(np.eye(q))
    sigma2 = max(ssr / dof, 1e-8)
    B = np.cov(np.asarray(coefs).T).reshape(q, q) / sigma2
    w, v = np.linalg.eigh(B)
    B = (v * np.maximum(w, 0.05)) @ v.T
    return _chol_to_theta(np.linalg.cholesky(B))


def fit_lmm(ds: LongitudinalDataset, spec: LmmSpec, method: str = "reml") -> LmmFit:
    """Fit the mixed model, returning estimates and empirical Bayes effects.

    Raises ``SingularDesignError`` for a rank-deficient fixed design and
    ``ConvergenceError`` (carrying the best iterate) if the optimizer fails
    to reach a stationary point within 500 iterations.
    """
    method = method.lower()
    if method not in ("reml", "ml"):
        raise ValueError(f"method must be 'reml' or 'ml', got {method!r}")
    reml = method == "reml"

    if ds.n_subjects < 2:
        raise LmmError("need at least 2 subjects")
    packed = _pack(ds, spec)
    if packed.n_obs <= packed.p + packed.q:
        raise LmmError(
            f"too few observations ({packed.n_obs}) for {packed.p} fixed + "
            f"{packed.q} random terms")

    Xall = np.concatenate([g.X.reshape(-1, packed.p) for g in packed.groups])
    sv = np.linalg.svd(Xall, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        _, _, vt = np.linalg.svd(Xall)
        involved = np.flatnonzero(np.abs(vt[-1]) > 1e-6)
        names = spec.fixed.names
        raise SingularDesignError(tuple(names[i] for i in involved))

    if packed.q == 0:
        # no random effects: plain (RE)ML reduces to OLS with the usual σ̂²
        theta0 = np.empty(0)
        dev, _, beta, Ainv, sigma2, _, _ = _deviance_and_grad(theta0, packed, reml)
        return LmmFit(
            spec=spec, method=method, beta=beta,
            beta_se=np.sqrt(np.diag(Ainv) * sigma2), beta_names=spec.fixed.names,
            Sigma=np.zeros((0, 0)), sigma2=float(sigma2),
            b=np.zeros((packed.n_subjects, 0)), subject_ids=ds.subject_ids,
            loglik=-0.5 * dev, n_iter=0, grad_norm=0.0,
            objective_path=np.array([dev]), theta=theta0,
        )

    path = []
    last_eval = {}

    def objective(theta):
        try:
            dev, grad, *_ = _deviance_and_grad(theta, packed, reml)
        except np.linalg.LinAlgError:
            # extreme line-search point; steer back toward the origin
            return 1e10 * (1.0 + float(theta @ theta)), 2e10 * theta
        last_eval[theta.tobytes()] = dev
        return dev, grad

    diag_idx = {a * (a + 1) // 2 + a for a in range(packed.q)}
    bounds = [(-20.0, 20.0) if k in diag_idx else (None, None)
              for k in range(packed.q * (packed.q + 1) // 2)]

    best = None
    for start in (_initial_theta(packed), _chol_to_theta(np.eye(packed.q))):
        res = minimize(
            objective, start, jac=True, method="L-BFGS-B", bounds=bounds,
            callback=lambda xk: path.append(last_eval.get(xk.tobytes(), np.nan)),
            options={"maxiter": 500, "ftol": 1e-12, "gtol": 1e-8},
        )
        if best is None or res.fun < best.fun:
            best = res
        if res.success and np.max(np.abs(res.jac)) < 1e-4 * max(1.0, abs(res.fun)):
            break

    dev, grad, beta, Ainv, sigma2, _, G = _deviance_and_grad(best.x, packed, reml)
    grad_norm = float(np.max(np.abs(grad))) / max(1.0, abs(dev))
    if grad_norm >= 1e-4:
        raise ConvergenceError("variance-component optimization did not converge",
                               theta=best.x, grad_norm=grad_norm, n_iter=best.nit)

    if sigma2 < 1e-12:
        warnings.warn("residual variance at boundary; clamping", stacklevel=2)
        sigma2 = 1e-12
    Sigma = sigma2 * G
    w, v = np.linalg.eigh(Sigma)
    if np.any(w < 1e-8):
        warnings.warn(
            f"random-effect covariance near boundary (min eigenvalue {w.min():.2e}); "
            "clamping", stacklevel=2)
        Sigma = (v * np.maximum(w, 1e-8)) @ v.T

    b = _eb_from_packed(packed, Sigma / sigma2, beta)

    return LmmFit(
        spec=spec,
        method=method,
        beta=beta,
        beta_se=np.sqrt(np.diag(Ainv) * sigma2),
        beta_names=spec.fixed.names,
        Sigma=Sigma,
        sigma2=float(sigma2),
        b=b,
        subject_ids=ds.subject_ids,
        loglik=-0.5 * dev,
        n_iter=int(best.nit),
        grad_norm=grad_norm,
        objective_path=np.asarray(path),
        theta=best.x,
    )


def _eb_from_packed(packed: _Packed, G: np.ndarray, beta: np.ndarray) -> np.ndarray:
    b = np.zeros((packed.n_subjects, packed.q))
    for g in packed.groups:
        k = g.y.shape[1]
        W = np.eye(k) + np.einsum("mkq,qr,mlr->mkl", g.Z, G, g.Z)
        Wir = np.linalg.solve(W, (g.y - g.X @ beta)[:, :, None])[:, :, 0]
        b[g.subj] = np.einsum("mki,mk->mi", g.Z, Wir) @ G.T
    return b


def profiled_deviance(ds: LongitudinalDataset, spec: LmmSpec, theta,
                      method: str = "reml") -> float:
    """Profiled deviance at a given log-Cholesky parameter (for checks)."""
    packed = _pack(ds, spec)
    dev, *_ = _deviance_and_grad(np.asarray(theta, dtype=float), packed,
                                 method.lower() == "reml")
    return dev


def profiled_deviance_grad(ds: LongitudinalDataset, spec: LmmSpec, theta,
                           method: str = "reml") -> np.ndarray:
    packed = _pack(ds, spec)
    _, grad, *_ = _deviance_and_grad(np.asarray(theta, dtype=float), packed,
                                     method.lower() == "reml")
    return grad


def empirical_bayes(fit: LmmFit, ds: LongitudinalDataset) -> np.ndarray:
    """Posterior means b̂ᵢ = Σ̂ Zᵢᵀ Vᵢ⁻¹ (yᵢ − Xᵢ β̂); zero for unobserved subjects."""
    spec = fit.spec
    sidx, time, y = ds.observation_arrays(spec.outcome)
    X = spec.fixed.design(time)
    Z = spec.random.design(time)
    q = Z.shape[1]
    b = np.zeros((ds.n_subjects, q))
    r = y - X @ fit.beta
    G = fit.Sigma / fit.sigma2
    for i in range(ds.n_subjects):
        rows = sidx == i
        if not np.any(rows):
            continue
        Zi = Z[rows]
        W = np.eye(Zi.shape[0]) + Zi @ G @ Zi.T
        b[i] = G @ Zi.T @ np.linalg.solve(W, r[rows])
    return b


def residuals(fit: LmmFit, ds: LongitudinalDataset) -> ResidualSeries:
    """ε̂ᵢ(t) = yᵢ(t) − xᵢᵀ(t)β̂ − zᵢᵀ(t)b̂ᵢ, with squared/absolute views."""
    spec = fit.spec
    sidx, time, y = ds.observation_arrays(spec.outcome)
    X = spec.fixed.design(time)
    Z = spec.random.design(time)
    raw = y - X @ fit.beta - np.einsum("nq,nq->n", Z, fit.b[sidx])
    return ResidualSeries(
        outcome=spec.outcome,
        subject_idx=sidx,
        subject_ids=ds.subject_ids,
        time=time,
        raw=raw,
    )


def variability_dataset(
    ds: LongitudinalDataset,
    resid: ResidualSeries,
    kind: str = "absolute",
    outcome: str = "marker_sd",
) -> LongitudinalDataset:
    """Dataset with the transformed residuals added as a second outcome."""
    return ds.with_outcome(outcome, resid.subject_idx, resid.time, resid.values(kind))
