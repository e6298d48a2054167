"""Vectorized joint-posterior evaluation with per-block incremental updates.

``JointTarget`` mirrors ``joint.log_posterior`` on the sampler's
unconstrained parametrization (log residual SDs, log random-effect SDs with
partial-correlation angles, log smoothing SD; Jacobians included) and keeps
per-component caches so a Metropolis-within-Gibbs sweep touches only what a
block changes. Per-subject random-effect updates are proposed and
accept/rejected for all subjects in one vectorized pass, which is valid
because subjects are conditionally independent given the shared parameters.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .data import LongitudinalDataset
from .joint import (
    JointModelSpec,
    JointParams,
    PriorScales,
    SubmodelParams,
    SurvivalParams,
    survival_quadrature,
)
from .priors import (
    SplinePrior,
    cpc_log_prior,
    log_halfnormal_density,
    log_normal_density,
    omega_from_raw,
    omega_to_raw,
)

__all__ = ["JointTarget"]

_ETA_MAX = 700.0  # exp() guard on the log-hazard scale


class JointTarget:
    def __init__(self, spec: JointModelSpec, ds: LongitudinalDataset):
        if spec.priors is None:
            raise ValueError("sampling requires proper priors (spec.priors is None)")
        self.spec = spec
        self.priors = spec.priors
        self.scales = PriorScales.from_data(spec, ds)
        self.n = ds.n_subjects
        self.M = len(spec.submodels)
        self.subject_ids = ds.subject_ids

        # longitudinal design arrays, flat and sorted by (subject, time)
        self.sidx, self.Xo, self.Zo, self.yo = [], [], [], []
        for sub in spec.submodels:
            sidx, t, y = ds.observation_arrays(sub.outcome)
            self.sidx.append(sidx)
            self.Xo.append(sub.fixed.design(t))
            self.Zo.append(sub.random.design(t))
            self.yo.append(y)
        self.p = [X.shape[1] for X in self.Xo]
        self.q = [Z.shape[1] for Z in self.Zo]
        self.n_obs = [y.size for y in self.yo]
        offsets = np.concatenate([[0], np.cumsum(self.q)])
        self.bsl = [slice(offsets[m], offsets[m + 1]) for m in range(self.M)]
        self.q_tot = int(offsets[-1])

        # survival design arrays; per-subject quadrature nodes are padded to
        # a common width with zero-weight nodes so everything stays rectangular
        self.T = ds.event_time.copy()
        self.delta = (ds.status == 1).astype(float)
        self.assoc = list(spec.associated)
        basis = spec.survival.baseline
        rows_u, rows_w = [], []
        for Ti in self.T:
            nodes, weights = survival_quadrature(spec, float(Ti))
            rows_u.append(nodes)
            rows_w.append(weights)
        self.u = np.concatenate(rows_u)          # flat quadrature nodes
        self.om = np.concatenate(rows_w)
        self.subjq = np.repeat(np.arange(self.n),
                               [r.size for r in rows_u]).astype(np.intp)
        self.B_T = basis.design(self.T)                          # (n, P)
        self.B_q = basis.design(self.u)                          # (Nq, P)
        self.P = self.B_T.shape[1]
        cov_idx = [ds.covariate_names.index(c) for c in spec.survival.covariates]
        self.Wcov = ds.covariates[:, cov_idx] if cov_idx else np.zeros((self.n, 0))
        self.XT, self.ZT, self.Xq, self.Zq = {}, {}, {}, {}
        for m in self.assoc:
            sub = spec.submodels[m]
            self.XT[m] = sub.fixed.design(self.T)
            self.ZT[m] = sub.random.design(self.T)
            self.Xq[m] = sub.fixed.design(self.u)
            self.Zq[m] = sub.random.design(self.u)

        self.spline_prior = SplinePrior(self.P, self.priors.rw_order,
                                        self.priors.coef_sd)

        # Centering the association covariates: the hazard is evaluated as
        # B(t)γ' + Σ α_a (cur_a(t) − c_a) with γ' = γ + (Σ α_a c_a)·1, which
        # is exactly the model's hazard because the clamped B-spline basis
        # sums to one. This decorrelates α from the baseline level; the
        # natural-scale γ is recovered for priors and reporting.
        self.c_assoc = {m: float(np.mean(self.yo[m])) for m in self.assoc}

        # fixed-design column index of each random column (for recentering)
        self.rand_to_fixed = []
        for m, sub in enumerate(spec.submodels):
            fixed_start = {}
            col = 0
            for term in sub.fixed.terms:
                fixed_start[term] = col
                col += len(term.names)
            idx = []
            for term in sub.random.terms:
                start = fixed_start[term]
                idx.extend(range(start, start + len(term.names)))
            self.rand_to_fixed.append(np.asarray(idx, dtype=int))

        # unconstrained state
        self.x: dict[str, np.ndarray] = {}
        self.b = np.zeros((self.n, self.q_tot))
        self._pending = None
        self._build_report_meta()

    # -- parameter packing ---------------------------------------------------

    def _center_shift(self, alpha: np.ndarray) -> float:
        return float(sum(alpha[a] * self.c_assoc[m]
                         for a, m in enumerate(self.assoc)))

    def set_params(self, params: JointParams) -> None:
        for m in range(self.M):
            sp = params.submodels[m]
            self.x[f"beta.{m}"] = np.asarray(sp.beta, dtype=float).copy()
            self.x[f"tau.{m}"] = np.array([0.5 * np.log(sp.tau2)])
            if self.q[m]:
                self.x[f"omega.{m}"] = omega_to_raw(np.asarray(sp.Omega))
                self.b[:, self.bsl[m]] = sp.b
        sv = params.survival
        if self.Wcov.shape[1]:
            self.x["gamma"] = np.asarray(sv.gamma, dtype=float).copy()
        if self.assoc:
            self.x["alpha"] = np.asarray(sv.alpha, dtype=float).copy()
        shift = self._center_shift(np.asarray(sv.alpha)) if self.assoc else 0.0
        self.x["spline"] = np.asarray(sv.spline_coefs, dtype=float) + shift
        self.x["smooth"] = np.array([np.log(sv.smooth_sd)])
        self.full_recompute()

    def get_params(self) -> JointParams:
        subs = []
        for m in range(self.M):
            tau2 = float(np.exp(2.0 * self.x[f"tau.{m}"][0]))
            if self.q[m]:
                Lo, _ = omega_from_raw(self.x[f"omega.{m}"], self.q[m])
                Omega = Lo @ Lo.T
            else:
                Omega = np.zeros((0, 0))
            subs.append(SubmodelParams(
                beta=self.x[f"beta.{m}"].copy(),
                b=self.b[:, self.bsl[m]].copy(),
                tau2=tau2,
                Omega=Omega,
            ))
        alpha = self.x.get("alpha", np.zeros(0))
        shift = self._center_shift(alpha) if self.assoc else 0.0
        return JointParams(
            submodels=subs,
            survival=SurvivalParams(
                gamma=self.x.get("gamma", np.zeros(0)).copy(),
                alpha=alpha.copy(),
                spline_coefs=self.x["spline"] - shift,
                smooth_sd=float(np.exp(self.x["smooth"][0])),
            ),
        )

    # -- cache construction ----------------------------------------------------

    def full_recompute(self) -> None:
        self.xb, self.zb, self.ss, self.ll_long = [], [], [], np.zeros(self.M)
        self.cholOm, self.re_i, self.ll_re = [], [], np.zeros(self.M)
        for m in range(self.M):
            beta = self.x[f"beta.{m}"]
            self.xb.append(self.Xo[m] @ beta)
            bm = self.b[:, self.bsl[m]]
            self.zb.append(np.einsum("nq,nq->n", self.Zo[m], bm[self.sidx[m]])
                           if self.q[m] else np.zeros(self.n_obs[m]))
            self.ss.append(self._ss(m, self.xb[m], self.zb[m]))
            self.ll_long[m] = self._ll_long(m, self.ss[m])
            if self.q[m]:
                Lo, _ = omega_from_raw(self.x[f"omega.{m}"], self.q[m])
                self.cholOm.append(Lo)
                self.re_i.append(self._re_density(m, Lo, bm))
            else:
                self.cholOm.append(np.zeros((0, 0)))
                self.re_i.append(np.zeros(self.n))
            self.ll_re[m] = self.re_i[m].sum()

        self.splT = self.B_T @ self.x["spline"]
        self.splq = self.B_q @ self.x["spline"]
        gamma = self.x.get("gamma")
        self.wg = self.Wcov @ gamma if gamma is not None else np.zeros(self.n)
        self.xbT, self.zbT, self.xbq, self.zbq = {}, {}, {}, {}
        for m in self.assoc:
            beta = self.x[f"beta.{m}"]
            bm = self.b[:, self.bsl[m]]
            self.xbT[m] = self.XT[m] @ beta
            self.zbT[m] = (np.einsum("nq,nq->n", self.ZT[m], bm)
                           if self.q[m] else np.zeros(self.n))
            self.xbq[m] = self.Xq[m] @ beta
            self.zbq[m] = (np.einsum("nq,nq->n", self.Zq[m], bm[self.subjq])
                           if self.q[m] else np.zeros(self.u.size))
        self.eta_T, self.H, self.ll_surv_i = self._surv_parts(
            self.splT, self.splq, self.wg,
            {m: self.xbT[m] + self.zbT[m] for m in self.assoc},
            {m: self.xbq[m] + self.zbq[m] for m in self.assoc},
        )
        self.ll_surv = self.ll_surv_i.sum()
        self.lp = {}
        for m in range(self.M):
            self.lp[f"beta.{m}"] = self._lp_beta(m, self.x[f"beta.{m}"])
            self.lp[f"tau.{m}"] = self._lp_tau(m, self.x[f"tau.{m}"])
            if self.q[m]:
                self.lp[f"omega.{m}"] = self._lp_omega(m, self.x[f"omega.{m}"])
        if "gamma" in self.x:
            self.lp["gamma"] = self._lp_gamma(self.x["gamma"])
        if "alpha" in self.x:
            self.lp["alpha"] = self._lp_alpha(self.x["alpha"])
        self.lp["spline"] = self._lp_spline(self.x["spline"], self.x["smooth"])
        self.lp["smooth"] = self._lp_smooth(self.x["smooth"])

    def logpost(self) -> float:
        return float(self.ll_long.sum() + self.ll_re.sum() + self.ll_surv
                     + sum(self.lp.values()))

    # -- component helpers -------------------------------------------------------

    def _ss(self, m, xb, zb) -> np.ndarray:
        resid = self.yo[m] - xb - zb
        return np.bincount(self.sidx[m], weights=resid**2, minlength=self.n)

    def _ll_long(self, m, ss) -> float:
        tau2 = np.exp(2.0 * self.x[f"tau.{m}"][0])
        return float(-0.5 * self.n_obs[m] * np.log(2 * np.pi * tau2)
                     - 0.5 * ss.sum() / tau2)

    def _re_density(self, m, Lo, bm) -> np.ndarray:
        q = self.q[m]
        v = solve_triangular(Lo, bm.T, lower=True)
        logdet = np.sum(np.log(np.diag(Lo)))
        return (-0.5 * q * np.log(2 * np.pi) - logdet - 0.5 * np.sum(v**2, axis=0))

    def _surv_parts(self, splT, splq, wg, curT: dict, curq: dict, alpha=None):
        eta_T = splT + wg
        eta_q = splq + wg[self.subjq] if wg.any() else splq
        if self.assoc:
            alpha = self.x["alpha"] if alpha is None else alpha
            for a, m in enumerate(self.assoc):
                eta_T = eta_T + alpha[a] * (curT[m] - self.c_assoc[m])
                eta_q = eta_q + alpha[a] * (curq[m] - self.c_assoc[m])
        H = np.bincount(self.subjq,
                        weights=self.om * np.exp(np.minimum(eta_q, _ETA_MAX)),
                        minlength=self.n)
        ll_i = self.delta * eta_T - H
        return eta_T, H, ll_i

    # -- priors (unconstrained scale, Jacobians included) -------------------------

    def _lp_beta(self, m, v) -> float:
        return log_normal_density(v, self.priors.coef_sd * self.scales.coef_scale[m])

    def _lp_tau(self, m, v) -> float:
        tau = np.exp(v[0])
        return (log_halfnormal_density(tau, self.priors.sd_scale
                                       * self.scales.outcome_sd[m]) + v[0])

    def _lp_omega(self, m, v) -> float:
        q = self.q[m]
        s = np.exp(v[:q])
        lp = log_halfnormal_density(s, self.priors.sd_scale * self.scales.re_scale[m])
        lp += float(np.sum(v[:q]))  # d s / d log s
        lp += cpc_log_prior(v[q:], q)
        return lp

    def _lp_gamma(self, v) -> float:
        return log_normal_density(v, self.priors.coef_sd * self.scales.cov_scale)

    def _lp_alpha(self, v) -> float:
        return log_normal_density(v, self.priors.coef_sd * self.scales.assoc_scale)

    def _lp_spline(self, v, smooth_x, alpha=None) -> float:
        # prior applies to the natural-scale coefficients; the internal
        # centering shift is a unit-Jacobian shear
        if self.assoc:
            alpha = self.x["alpha"] if alpha is None else alpha
            v = v - self._center_shift(alpha)
        return self.spline_prior.log_density(v, float(np.exp(smooth_x[0])))

    def _lp_smooth(self, v) -> float:
        ssd = np.exp(v[0])
        return log_halfnormal_density(ssd, self.priors.smooth_sd_scale) + v[0]

    # -- engine interface: shared blocks ------------------------------------------

    def shared_block_names(self) -> list[str]:
        names = [f"beta.{m}" for m in range(self.M)]
        if "gamma" in self.x:
            names.append("gamma")
        if "alpha" in self.x:
            names.append("alpha")
        names.append("spline")
        names.append("smooth")
        names += [f"tau.{m}" for m in range(self.M)]
        names += [f"omega.{m}" for m in range(self.M) if self.q[m]]
        names += [f"recenter.{m}" for m in range(self.M) if self.q[m]]
        return names

    def get_block(self, name: str) -> np.ndarray:
        if name.startswith("recenter."):
            m = int(name.split(".")[1])
            return np.zeros(self.q[m])
        return self.x[name].copy()

    def block_proposal_chol(self, name: str) -> np.ndarray | None:
        """Fixed proposal shape where the conditional geometry is analytic.

        Given the random effects, β's conditional covariance is proportional
        to (XᵀX)⁻¹; learning a shape from chain history would instead pick
        up the much wider marginal (the recentering moves walk the β/b
        ridge) and mis-scale the proposals.
        """
        if not name.startswith("beta."):
            return None
        m = int(name.split(".")[1])
        X = self.Xo[m]
        cov = np.linalg.inv(X.T @ X / X.shape[0])
        chol = np.linalg.cholesky(cov)
        return chol / np.sqrt(np.trace(cov) / cov.shape[0])

    def block_delta(self, name: str, v: np.ndarray) -> float:
        kind = name.split(".")[0]
        handler = getattr(self, f"_prep_{kind}")
        m = int(name.split(".")[1]) if "." in name else None
        delta, updates = handler(v) if m is None else handler(m, v)
        self._pending = (name, v, updates)
        return delta

    def block_commit(self, name: str) -> None:
        pname, v, updates = self._pending
        assert pname == name
        if not name.startswith("recenter."):
            self.x[name] = v.copy()
        for attr, value in updates.items():
            if isinstance(attr, tuple):
                getattr(self, attr[0])[attr[1]] = value
            else:
                setattr(self, attr, value)
        self._pending = None

    def block_reject(self, name: str) -> None:
        self._pending = None

    # block preparation: return (delta_logpost, cache updates)

    def _prep_beta(self, m, v):
        xb_new = self.Xo[m] @ v
        ss_new = self._ss(m, xb_new, self.zb[m])
        tau2 = np.exp(2.0 * self.x[f"tau.{m}"][0])
        ll_long_new = float(-0.5 * self.n_obs[m] * np.log(2 * np.pi * tau2)
                            - 0.5 * ss_new.sum() / tau2)
        lp_new = self._lp_beta(m, v)
        delta = (ll_long_new - self.ll_long[m]) + (lp_new - self.lp[f"beta.{m}"])
        ll_long = self.ll_long.copy()
        ll_long[m] = ll_long_new
        updates = {
            ("xb", m): xb_new, ("ss", m): ss_new, "ll_long": ll_long,
            ("lp", f"beta.{m}"): lp_new,
        }
        if m in self.assoc:
            xbT_new = self.XT[m] @ v
            xbq_new = self.Xq[m] @ v
            curT = {k: (xbT_new if k == m else self.xbT[k]) + self.zbT[k]
                    for k in self.assoc}
            curq = {k: (xbq_new if k == m else self.xbq[k]) + self.zbq[k]
                    for k in self.assoc}
            eta_T, H, ll_i = self._surv_parts(self.splT, self.splq, self.wg,
                                              curT, curq)
            delta += ll_i.sum() - self.ll_surv
            updates.update({
                ("xbT", m): xbT_new, ("xbq", m): xbq_new,
                "eta_T": eta_T, "H": H, "ll_surv_i": ll_i,
                "ll_surv": float(ll_i.sum()),
            })
        return delta, updates

    def _prep_tau(self, m, v):
        tau2 = np.exp(2.0 * v[0])
        ll_new = float(-0.5 * self.n_obs[m] * np.log(2 * np.pi * tau2)
                       - 0.5 * self.ss[m].sum() / tau2)
        lp_new = self._lp_tau(m, v)
        delta = (ll_new - self.ll_long[m]) + (lp_new - self.lp[f"tau.{m}"])
        ll_long = self.ll_long.copy()
        ll_long[m] = ll_new
        return delta, {"ll_long": ll_long, ("lp", f"tau.{m}"): lp_new}

    def _prep_omega(self, m, v):
        q = self.q[m]
        Lo, _ = omega_from_raw(v, q)
        if not np.all(np.isfinite(Lo)) or np.any(np.diag(Lo) <= 0):
            return -np.inf, {}
        re_new = self._re_density(m, Lo, self.b[:, self.bsl[m]])
        lp_new = self._lp_omega(m, v)
        delta = (re_new.sum() - self.ll_re[m]) + (lp_new - self.lp[f"omega.{m}"])
        ll_re = self.ll_re.copy()
        ll_re[m] = re_new.sum()
        return delta, {
            ("cholOm", m): Lo, ("re_i", m): re_new, "ll_re": ll_re,
            ("lp", f"omega.{m}"): lp_new,
        }

    def _prep_gamma(self, v):
        wg_new = self.Wcov @ v
        eta_T, H, ll_i = self._surv_parts(
            self.splT, self.splq, wg_new,
            {m: self.xbT[m] + self.zbT[m] for m in self.assoc},
            {m: self.xbq[m] + self.zbq[m] for m in self.assoc})
        lp_new = self._lp_gamma(v)
        delta = (ll_i.sum() - self.ll_surv) + (lp_new - self.lp["gamma"])
        return delta, {"wg": wg_new, "eta_T": eta_T, "H": H, "ll_surv_i": ll_i,
                       "ll_surv": float(ll_i.sum()), ("lp", "gamma"): lp_new}

    def _prep_alpha(self, v):
        eta_T, H, ll_i = self._surv_parts(
            self.splT, self.splq, self.wg,
            {m: self.xbT[m] + self.zbT[m] for m in self.assoc},
            {m: self.xbq[m] + self.zbq[m] for m in self.assoc}, alpha=v)
        lp_new = self._lp_alpha(v)
        lp_spline_new = self._lp_spline(self.x["spline"], self.x["smooth"], alpha=v)
        delta = (ll_i.sum() - self.ll_surv) + (lp_new - self.lp["alpha"]) \
            + (lp_spline_new - self.lp["spline"])
        return delta, {"eta_T": eta_T, "H": H, "ll_surv_i": ll_i,
                       "ll_surv": float(ll_i.sum()), ("lp", "alpha"): lp_new,
                       ("lp", "spline"): lp_spline_new}

    def _prep_spline(self, v):
        splT_new = self.B_T @ v
        splq_new = self.B_q @ v
        eta_T, H, ll_i = self._surv_parts(
            splT_new, splq_new, self.wg,
            {m: self.xbT[m] + self.zbT[m] for m in self.assoc},
            {m: self.xbq[m] + self.zbq[m] for m in self.assoc})
        lp_new = self._lp_spline(v, self.x["smooth"])
        delta = (ll_i.sum() - self.ll_surv) + (lp_new - self.lp["spline"])
        return delta, {"splT": splT_new, "splq": splq_new, "eta_T": eta_T,
                       "H": H, "ll_surv_i": ll_i, "ll_surv": float(ll_i.sum()),
                       ("lp", "spline"): lp_new}

    def _prep_smooth(self, v):
        lp_spline_new = self._lp_spline(self.x["spline"], v)
        lp_new = self._lp_smooth(v)
        delta = (lp_spline_new - self.lp["spline"]) + (lp_new - self.lp["smooth"])
        return delta, {("lp", "spline"): lp_spline_new, ("lp", "smooth"): lp_new}

    def _prep_recenter(self, m, delta_vec):
        """Shift β along its random columns and all b oppositely.

        The submodel mean and hence both data likelihoods are invariant;
        only the random-effect density and the β prior move. Cures the slow
        random walk along the fixed-effect/random-intercept ridge.
        """
        cols = self.rand_to_fixed[m]
        beta_new = self.x[f"beta.{m}"].copy()
        beta_new[cols] += delta_vec
        b_new = self.b.copy()
        b_new[:, self.bsl[m]] -= delta_vec[None, :]
        bm = b_new[:, self.bsl[m]]
        re_new = self._re_density(m, self.cholOm[m], bm)
        lp_new = self._lp_beta(m, beta_new)
        delta = (re_new.sum() - self.ll_re[m]) + (lp_new - self.lp[f"beta.{m}"])
        ll_re = self.ll_re.copy()
        ll_re[m] = re_new.sum()
        # mean-structure caches move in lockstep (xb+zb stays constant)
        xb_new = self.xb[m] + self.Xo[m][:, cols] @ delta_vec
        zb_new = self.zb[m] - self.Zo[m] @ delta_vec
        updates = {
            ("x", f"beta.{m}"): beta_new, "b": b_new,
            ("re_i", m): re_new, "ll_re": ll_re,
            ("lp", f"beta.{m}"): lp_new,
            ("xb", m): xb_new, ("zb", m): zb_new,
        }
        if m in self.assoc:
            updates[("xbT", m)] = self.xbT[m] + self.XT[m][:, cols] @ delta_vec
            updates[("zbT", m)] = self.zbT[m] - self.ZT[m] @ delta_vec
            updates[("xbq", m)] = self.xbq[m] + self.Xq[m][:, cols] @ delta_vec
            updates[("zbq", m)] = self.zbq[m] - self.Zq[m] @ delta_vec
        return delta, updates

    # -- engine interface: vectorized subject update -------------------------------

    @property
    def n_subjects(self) -> int:
        return self.n if self.q_tot else 0

    def subject_step(self, rng, scales: np.ndarray) -> np.ndarray:
        """One Metropolis update of every subject's random-effect vector."""
        noise = np.zeros((self.n, self.q_tot))
        for m in range(self.M):
            if self.q[m]:
                noise[:, self.bsl[m]] = (
                    rng.standard_normal((self.n, self.q[m])) @ self.cholOm[m].T)
        b_new = self.b + scales[:, None] * noise

        delta = np.zeros(self.n)
        zb_new, ss_new, re_new = [], [], []
        for m in range(self.M):
            if self.q[m]:
                bm = b_new[:, self.bsl[m]]
                zb = np.einsum("nq,nq->n", self.Zo[m], bm[self.sidx[m]])
                re = self._re_density(m, self.cholOm[m], bm)
            else:
                zb = self.zb[m]
                re = self.re_i[m]
            ss = self._ss(m, self.xb[m], zb)
            tau2 = np.exp(2.0 * self.x[f"tau.{m}"][0])
            delta += -0.5 * (ss - self.ss[m]) / tau2 + (re - self.re_i[m])
            zb_new.append(zb)
            ss_new.append(ss)
            re_new.append(re)

        zbT_new, zbq_new = {}, {}
        for m in self.assoc:
            bm = b_new[:, self.bsl[m]]
            if self.q[m]:
                zbT_new[m] = np.einsum("nq,nq->n", self.ZT[m], bm)
                zbq_new[m] = np.einsum("nq,nq->n", self.Zq[m], bm[self.subjq])
            else:
                zbT_new[m] = self.zbT[m]
                zbq_new[m] = self.zbq[m]
        eta_T, H, ll_i = self._surv_parts(
            self.splT, self.splq, self.wg,
            {m: self.xbT[m] + zbT_new[m] for m in self.assoc},
            {m: self.xbq[m] + zbq_new[m] for m in self.assoc})
        delta += ll_i - self.ll_surv_i

        accept = np.log(rng.uniform(size=self.n)) < delta
        if np.any(accept):
            idx = np.flatnonzero(accept)
            self.b[idx] = b_new[idx]
            for m in range(self.M):
                if self.q[m]:
                    mask_obs = accept[self.sidx[m]]
                    self.zb[m][mask_obs] = zb_new[m][mask_obs]
                    self.re_i[m][idx] = re_new[m][idx]
                self.ss[m][idx] = ss_new[m][idx]
                self.ll_long[m] = self._ll_long(m, self.ss[m])
                self.ll_re[m] = self.re_i[m].sum()
            mask_q = accept[self.subjq]
            for m in self.assoc:
                if self.q[m]:
                    self.zbT[m][idx] = zbT_new[m][idx]
                    self.zbq[m][mask_q] = zbq_new[m][mask_q]
            self.eta_T[idx] = eta_T[idx]
            self.H[idx] = H[idx]
            self.ll_surv_i[idx] = ll_i[idx]
            self.ll_surv = float(self.ll_surv_i.sum())
        return accept

    def re_snapshot(self) -> np.ndarray:
        return self.b

    # -- reporting -------------------------------------------------------------

    def _build_report_meta(self):
        names = []
        for m, sub in enumerate(self.spec.submodels):
            out = sub.outcome
            names += [f"{out}.beta.{j}" for j in range(self.p[m])]
            names.append(f"{out}.sigma")
            names += [f"{out}.re_sd.{j}" for j in range(self.q[m])]
            names += [f"{out}.re_corr.{i}.{j}"
                      for i in range(1, self.q[m]) for j in range(i)]
        names += [f"surv.gamma.{c}" for c in self.spec.survival.covariates]
        names += [f"assoc.{self.spec.submodels[m].outcome}" for m in self.assoc]
        names += [f"baseline.{j}" for j in range(self.P)]
        names.append("baseline.smooth_sd")
        self.report_names: tuple[str, ...] = tuple(names)

    def report_values(self) -> np.ndarray:
        vals = []
        for m in range(self.M):
            vals.extend(self.x[f"beta.{m}"])
            vals.append(np.exp(self.x[f"tau.{m}"][0]))
            if self.q[m]:
                Lo = self.cholOm[m]
                Omega = Lo @ Lo.T
                s = np.sqrt(np.diag(Omega))
                vals.extend(s)
                corr = Omega / np.outer(s, s)
                vals.extend(corr[i, j] for i in range(1, self.q[m]) for j in range(i))
        if "gamma" in self.x:
            vals.extend(self.x["gamma"])
        shift = 0.0
        if "alpha" in self.x:
            vals.extend(self.x["alpha"])
            shift = self._center_shift(self.x["alpha"])
        vals.extend(self.x["spline"] - shift)
        vals.append(np.exp(self.x["smooth"][0]))
        return np.asarray(vals, dtype=float)
