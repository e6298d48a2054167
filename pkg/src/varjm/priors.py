"""Prior densities and standardization scales for the Bayesian joint model.

Coefficient priors are normal(0, 10²) on the standardized scale, realized by
multiplying the prior SD with data-derived factors (outcome SD over design
column SD; hazard-scale coefficients scale with 1/covariate SD). Variance
parameters get half-normal priors on the SD scale. Random-effect covariances
decompose into half-normal SDs and a uniform correlation matrix parametrized
through canonical partial correlations of its Cholesky factor. Spline
coefficients carry a proper order-2 random-walk prior: the difference
penalty's range space is penalized with a half-normal smoothing SD, its null
space gets the ordinary coefficient prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

__all__ = [
    "PriorSet",
    "log_normal_density",
    "log_halfnormal_density",
    "cpc_to_corr_chol",
    "corr_to_cpc",
    "cpc_log_prior",
    "omega_from_raw",
    "omega_to_raw",
    "SplinePrior",
]


@dataclass(frozen=True)
class PriorSet:
    """Hyperparameters; all resulting densities are proper."""

    coef_sd: float = 10.0        # normal SD for standardized coefficients
    sd_scale: float = 5.0        # half-normal scale for SD parameters
    smooth_sd_scale: float = 2.0  # half-normal scale for the RW smoothing SD
    rw_order: int = 2


def log_normal_density(x, sd) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sd = np.broadcast_to(np.asarray(sd, dtype=float), x.shape)
    return float(np.sum(-0.5 * np.log(2 * np.pi) - np.log(sd) - 0.5 * (x / sd) ** 2))


def log_halfnormal_density(x, scale) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        return -np.inf
    scale = np.broadcast_to(np.asarray(scale, dtype=float), x.shape)
    return float(np.sum(0.5 * np.log(2 / np.pi) - np.log(scale)
                        - 0.5 * (x / scale) ** 2))


# -- correlation matrices via canonical partial correlations -----------------
#
# z (unconstrained) -> p = tanh(z) -> lower Cholesky factor of a correlation
# matrix, row by row. Under independent symmetric-Beta densities on the p's
# the implied correlation matrix is uniform (LKJ with shape 1); the vine
# level of entry (i, j) is its column j.


def _cpc_index(q: int):
    return [(i, j) for i in range(1, q) for j in range(i)]


def cpc_to_corr_chol(z: np.ndarray, q: int) -> np.ndarray:
    """Build the correlation Cholesky factor from unconstrained z."""
    L = np.zeros((q, q))
    L[0, 0] = 1.0
    p = np.tanh(z)
    k = 0
    for i in range(1, q):
        rem = 1.0
        for j in range(i):
            L[i, j] = p[k] * np.sqrt(rem)
            rem -= L[i, j] ** 2
            k += 1
        L[i, i] = np.sqrt(max(rem, 1e-300))
    return L


def corr_to_cpc(corr: np.ndarray) -> np.ndarray:
    """Inverse of ``cpc_to_corr_chol`` (via the Cholesky factor)."""
    q = corr.shape[0]
    L = np.linalg.cholesky(corr)
    z = []
    for i in range(1, q):
        rem = 1.0
        for j in range(i):
            p = L[i, j] / np.sqrt(rem)
            p = np.clip(p, -1 + 1e-12, 1 - 1e-12)
            z.append(np.arctanh(p))
            rem -= L[i, j] ** 2
    return np.array(z)


def cpc_log_prior(z: np.ndarray, q: int) -> float:
    """Log density of z under the uniform-correlation prior (incl. Jacobian)."""
    if q < 2:
        return 0.0
    p = np.tanh(z)
    lp = 0.0
    for k, (_, j) in enumerate(_cpc_index(q)):
        b = 1.0 + 0.5 * (q - 2 - j)
        # symmetric Beta(b, b) on (-1, 1), plus d tanh jacobian log(1 - p²)
        lp += (b - 1.0) * np.log1p(-p[k] ** 2) \
            - ((2 * b - 1) * np.log(2.0) + betaln(b, b)) \
            + np.log1p(-p[k] ** 2)
    return float(lp)


def omega_from_raw(raw: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    """(chol(Ω), sds) from raw = [log s_1..log s_q, z_1..z_{q(q-1)/2}]."""
    s = np.exp(raw[:q])
    Lc = cpc_to_corr_chol(raw[q:], q)
    return s[:, None] * Lc, s


def omega_to_raw(Omega: np.ndarray) -> np.ndarray:
    s = np.sqrt(np.diag(Omega))
    corr = Omega / np.outer(s, s)
    return np.concatenate([np.log(s), corr_to_cpc(corr)])


class SplinePrior:
    """Proper RW(order) prior for spline coefficients.

    DᵀD = U diag(d) Uᵀ; the range-space coordinates v = Uᵀγ get precision
    d/s², null-space coordinates get the flat-ish normal(0, coef_sd²).
    """

    def __init__(self, size: int, order: int = 2, coef_sd: float = 10.0):
        d = np.diff(np.eye(size), n=order, axis=0)
        evals, evecs = np.linalg.eigh(d.T @ d)
        self.size = size
        self.order = order
        self.coef_sd = coef_sd
        null = evals < 1e-10
        self.d_range = evals[~null]
        self.U_range = evecs[:, ~null]
        self.U_null = evecs[:, null]

    def log_density(self, coefs: np.ndarray, smooth_sd: float) -> float:
        if smooth_sd <= 0:
            return -np.inf
        v_r = self.U_range.T @ coefs
        v_n = self.U_null.T @ coefs
        prec = self.d_range / smooth_sd**2
        lp = float(np.sum(0.5 * np.log(prec) - 0.5 * np.log(2 * np.pi)
                          - 0.5 * prec * v_r**2))
        lp += log_normal_density(v_n, self.coef_sd)
        return lp
