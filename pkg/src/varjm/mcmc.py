"""Posterior sampling and convergence diagnostics for the joint model."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import LongitudinalDataset
from .engine import run_chain
from .joint import JointModelSpec, JointParams, SubmodelParams, SurvivalParams
from .lmm import LmmSpec, fit_lmm
from .priors import PriorSet
from .splines import penalty
from .target import JointTarget

logger = logging.getLogger(__name__)

__all__ = [
    "SamplerConfig",
    "ParamSummary",
    "JointModelFit",
    "initialize",
    "sample",
    "rhat",
    "summarize",
    "mcse",
    "nelson_aalen",
]

RHAT_SENTINEL = np.inf  # zero within-chain variance: reported as non-converged


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 3
    n_warmup: int = 1000
    n_kept: int = 2000
    seed: int = 0
    jitter: float = 1.0
    frozen_blocks: tuple[str, ...] = ()
    initial_scales: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_chains < 1 or self.n_warmup < 1 or self.n_kept < 1:
            raise ValueError("chain, warmup and kept counts must be positive")


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    sd: float
    q2_5: float
    q97_5: float
    rhat: float


@dataclass
class JointModelFit:
    param_names: tuple[str, ...]
    chains: dict  # name -> (n_chains, n_kept)
    summaries: dict  # name -> ParamSummary
    acceptance: list  # per chain: block -> rate
    re_mean: dict  # outcome -> (n_subjects, q) posterior-mean random effects
    subject_ids: tuple[str, ...]
    runtime_s: float
    config: SamplerConfig

    def chain_matrix(self) -> np.ndarray:
        """(n_chains, n_kept, n_params) in param_names order."""
        return np.stack([self.chains[p] for p in self.param_names], axis=-1)


# -- initialization -----------------------------------------------------------


def nelson_aalen(event_time, status) -> tuple[np.ndarray, np.ndarray]:
    """Nelson-Aalen cumulative hazard at the ordered distinct event times."""
    event_time = np.asarray(event_time, dtype=float)
    status = np.asarray(status)
    order = np.argsort(event_time, kind="stable")
    t_sorted = event_time[order]
    d_sorted = status[order]
    n = t_sorted.size
    at_risk = n - np.arange(n)
    increments = d_sorted / at_risk
    cum = np.cumsum(increments)
    events = d_sorted.astype(bool)
    t_ev = np.unique(t_sorted[events])
    # cumulative hazard evaluated at each distinct event time (right limit)
    H = np.array([cum[np.searchsorted(t_sorted, t, side="right") - 1] for t in t_ev])
    return t_ev, H


def _spline_init(spec: JointModelSpec, ds: LongitudinalDataset) -> np.ndarray:
    """Penalized regression of a smoothed Nelson-Aalen log hazard."""
    basis = spec.survival.baseline
    t_ev, H_ev = nelson_aalen(ds.event_time, ds.status)
    t_max = float(ds.event_time.max())
    if t_ev.size < 2:
        # almost no events: flat low hazard
        rate = max(ds.status.sum(), 1) / ds.event_time.sum()
        return np.full(basis.n_basis, np.log(rate))
    grid = np.linspace(0.0, t_max, 80)
    H_grid = np.interp(grid, np.concatenate([[0.0], t_ev]),
                       np.concatenate([[0.0], H_ev]))
    width = max(3, grid.size // 16)
    kernel = np.ones(width) / width
    H_smooth = np.convolve(np.pad(H_grid, width, mode="edge"), kernel,
                           mode="same")[width:-width]
    haz = np.gradient(H_smooth, grid)
    floor = max(float(np.max(haz)) * 1e-4, 1e-10)
    log_h = np.log(np.maximum(haz, floor))
    B = basis.design(grid)
    pen = penalty(2, basis.n_basis).matrix
    coefs = np.linalg.solve(B.T @ B + 1.0 * pen + 1e-8 * np.eye(basis.n_basis),
                            B.T @ log_h)
    return coefs


def initialize(spec: JointModelSpec, ds: LongitudinalDataset) -> JointParams:
    """Deterministic initializer: Step-1 mixed fits for the longitudinal
    blocks, zero survival coefficients, smoothed Nelson-Aalen spline start."""
    subs = []
    for sub in spec.submodels:
        fit = fit_lmm(ds, LmmSpec(fixed=sub.fixed, random=sub.random,
                                  outcome=sub.outcome), method="reml")
        Omega = fit.Sigma.copy()
        if Omega.size:
            # boundary REML fits can be numerically degenerate (correlation
            # ±1, vanishing eigenvalues); shrink toward the diagonal so the
            # chains start at a well-conditioned point
            diag = np.diag(np.diag(Omega))
            Omega = 0.9 * Omega + 0.1 * diag + 1e-6 * np.eye(Omega.shape[0]) \
                * max(np.trace(Omega) / Omega.shape[0], 1e-6)
        subs.append(SubmodelParams(
            beta=fit.beta.copy(),
            b=fit.b.copy(),
            tau2=max(fit.sigma2, 1e-10),
            Omega=Omega,
        ))
    sv = SurvivalParams(
        gamma=np.zeros(len(spec.survival.covariates)),
        alpha=np.zeros(len(spec.associated)),
        spline_coefs=_spline_init(spec, ds),
        smooth_sd=1.0,
    )
    return JointParams(submodels=subs, survival=sv)


def _jitter_params(params: JointParams, spec: JointModelSpec, amount: float,
                   rng) -> JointParams:
    if amount == 0:
        return params
    subs = []
    for sp in params.submodels:
        if sp.Omega.size:
            # jitter along the covariance geometry so near-degenerate
            # directions are respected
            chol = np.linalg.cholesky(sp.Omega)
            b_noise = rng.standard_normal(sp.b.shape) @ chol.T
        else:
            b_noise = np.zeros(sp.b.shape)
        subs.append(SubmodelParams(
            beta=sp.beta + amount * 0.02 * np.maximum(np.abs(sp.beta), 0.1)
            * rng.standard_normal(sp.beta.size),
            b=sp.b + amount * 0.05 * b_noise,
            tau2=float(sp.tau2 * np.exp(amount * 0.05 * rng.standard_normal())),
            Omega=sp.Omega * float(np.exp(amount * 0.05 * rng.standard_normal())),
        ))
    sv = params.survival
    return JointParams(
        submodels=subs,
        survival=SurvivalParams(
            gamma=sv.gamma + amount * 0.01 * rng.standard_normal(sv.gamma.size),
            alpha=sv.alpha + amount * 0.01 * rng.standard_normal(sv.alpha.size),
            spline_coefs=sv.spline_coefs + amount * 0.05
            * rng.standard_normal(sv.spline_coefs.size),
            smooth_sd=float(sv.smooth_sd * np.exp(amount * 0.1 * rng.standard_normal())),
        ),
    )


# -- sampling -------------------------------------------------------------------


def sample(
    spec: JointModelSpec,
    ds: LongitudinalDataset,
    cfg: SamplerConfig,
    init: JointParams | None = None,
    deadline_s: float | None = None,
) -> JointModelFit:
    """Draw from the joint posterior; deterministic given ``cfg.seed``.

    Chains use independent counter-based RNG streams and may run in any
    order; results are merged by chain index. Raises if the initializer has
    a non-finite posterior, and flags chains whose post-warmup acceptance
    collapsed to zero.
    """
    t0 = time.monotonic()
    deadline = None if deadline_s is None else t0 + deadline_s
    base = initialize(spec, ds) if init is None else init

    chain_results = []
    first_names = None
    for c in range(cfg.n_chains):
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(cfg.seed, spawn_key=(c,))))
        params = _jitter_params(base, spec, cfg.jitter, rng)
        target = JointTarget(spec, ds)
        target.set_params(params)
        lp0 = target.logpost()
        if not np.isfinite(lp0):
            raise RuntimeError(f"initializer log posterior is {lp0} in chain {c}")
        result = run_chain(
            target, rng, cfg.n_warmup, cfg.n_kept,
            initial_scales=cfg.initial_scales,
            frozen_blocks=cfg.frozen_blocks,
            deadline=deadline,
        )
        zero = [name for name, rate in result.acceptance.items()
                if np.isfinite(rate) and rate == 0.0]
        if zero:
            raise RuntimeError(
                f"chain {c}: zero accepted proposals after warmup for {zero}")
        chain_results.append((result, target))
        if first_names is None:
            first_names = target.report_names

    names = first_names
    chains = {
        name: np.stack([res.draws[:, j] for res, _ in chain_results])
        for j, name in enumerate(names)
    }
    summaries = {name: _summarize_one(chains[name]) for name in names}

    re_mean = {}
    if chain_results[0][1].q_tot:
        target0 = chain_results[0][1]
        stacked = np.mean([res.re_mean for res, _ in chain_results], axis=0)
        for m, sub in enumerate(spec.submodels):
            re_mean[sub.outcome] = stacked[:, target0.bsl[m]]

    return JointModelFit(
        param_names=names,
        chains=chains,
        summaries=summaries,
        acceptance=[res.acceptance for res, _ in chain_results],
        re_mean=re_mean,
        subject_ids=ds.subject_ids,
        runtime_s=time.monotonic() - t0,
        config=cfg,
    )


# -- diagnostics ------------------------------------------------------------------


def rhat(chains) -> float:
    """Split-chain potential scale reduction factor for one parameter.

    ``chains`` is (n_chains, n_draws) with n_chains >= 2 and n_draws >= 4.
    Zero within-chain variance is reported as the non-convergence sentinel
    (inf). The statistic is floored at 1 (sampling noise in the
    between-chain term can push the raw value slightly below).
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 4:
        raise ValueError("need a (n_chains >= 2, n_draws >= 4) array")
    half = chains.shape[1] // 2
    split = np.concatenate([chains[:, :half], chains[:, half:2 * half]], axis=0)
    within = split.var(axis=1, ddof=1)
    w = within.mean()
    scale = max(1.0, float(np.mean(np.abs(chains))) ** 2)
    if w <= 1e-24 * scale or not np.isfinite(w):
        return RHAT_SENTINEL
    b_over_n = split.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * w + b_over_n
    return float(max(1.0, np.sqrt(var_plus / w)))


def _summarize_one(chain_matrix: np.ndarray) -> ParamSummary:
    pooled = chain_matrix.ravel()
    q_lo, q_hi = np.quantile(pooled, [0.025, 0.975])  # type-7 interpolation
    return ParamSummary(
        mean=float(pooled.mean()),
        sd=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
        q2_5=float(q_lo),
        q97_5=float(q_hi),
        rhat=rhat(chain_matrix) if chain_matrix.shape[0] >= 2
        and chain_matrix.shape[1] >= 4 else np.nan,
    )


def summarize(fit: JointModelFit) -> dict:
    """Recompute per-parameter summaries from the stored chains."""
    return {name: _summarize_one(fit.chains[name]) for name in fit.param_names}


def mcse(draws: np.ndarray, n_batches: int = 30) -> float:
    """Monte Carlo standard error of the mean by batch means."""
    draws = np.asarray(draws, dtype=float).ravel()
    nb = min(n_batches, max(2, draws.size // 10))
    m = draws.size // nb
    if m < 1:
        return float(draws.std(ddof=1) / np.sqrt(draws.size))
    batches = draws[: nb * m].reshape(nb, m).mean(axis=1)
    return float(np.sqrt(batches.var(ddof=1) / nb))
