"""B-spline and natural cubic spline bases with a difference penalty.

The B-spline basis is evaluated by the Cox-de Boor recursion on a clamped
knot vector (boundary knots repeated degree+1 times), so the basis forms a
partition of unity on the boundary interval. The natural cubic basis is the
usual constrained cubic B-spline construction: second derivatives vanish at
the boundary knots and evaluation beyond them extrapolates linearly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "BSplineBasis",
    "NaturalCubicBasis",
    "PenaltyMatrix",
    "bspline_eval",
    "ncs_eval",
    "penalty",
]


def _augmented_knots(boundary, interior, degree):
    lo, hi = boundary
    return np.concatenate([
        np.full(degree + 1, lo),
        np.asarray(interior, dtype=float),
        np.full(degree + 1, hi),
    ])


def _design(aug: np.ndarray, degree: int, x: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Design matrix of all basis functions of ``degree`` on knot vector ``aug``.

    ``x`` must already lie inside [aug[degree], aug[-degree-1]]. Derivatives
    are expressed through the lower-degree basis in the standard way.
    """
    n_basis = aug.size - degree - 1
    m = x.size
    if deriv > 0:
        if degree == 0:
            return np.zeros((m, n_basis))
        lower = _design(aug, degree - 1, x, deriv - 1)  # (m, n_basis + 1)
        d1 = aug[degree:degree + n_basis] - aug[:n_basis]
        d2 = aug[degree + 1:degree + 1 + n_basis] - aug[1:n_basis + 1]
        c1 = np.divide(degree, d1, out=np.zeros(n_basis), where=d1 > 0)
        c2 = np.divide(degree, d2, out=np.zeros(n_basis), where=d2 > 0)
        return lower[:, :n_basis] * c1 - lower[:, 1:] * c2

    # Interval index: aug[k] <= x < aug[k+1], with x at either boundary
    # assigned to the nearest non-empty interval (the knot vector carries
    # repeated boundary knots, so the clip bounds are knot-derived, not
    # degree-derived: the recursive derivative path evaluates lower-degree
    # bases on the same augmented knots).
    span = np.searchsorted(aug, x, side="right") - 1
    lo_span = np.searchsorted(aug, aug[0], side="right") - 1
    hi_span = np.searchsorted(aug, aug[-1], side="left") - 1
    span = np.clip(span, lo_span, hi_span)

    # Cox-de Boor triangle for the degree+1 non-zero functions at each x.
    vals = np.zeros((m, degree + 1))
    vals[:, 0] = 1.0
    left = np.empty((m, degree + 1))
    right = np.empty((m, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - aug[span + 1 - j]
        right[:, j] = aug[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            term = np.divide(vals[:, r], denom, out=np.zeros(m), where=denom != 0)
            vals[:, r] = saved + right[:, r + 1] * term
            saved = left[:, j - r] * term
        vals[:, j] = saved

    out = np.zeros((m, n_basis))
    cols = span[:, None] + np.arange(-degree, 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis on [boundary[0], boundary[1]]."""

    degree: int = 3
    interior_knots: tuple[float, ...] = ()
    boundary: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        lo, hi = self.boundary
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"invalid boundary {self.boundary}")
        ik = np.asarray(self.interior_knots, dtype=float)
        if ik.size and (np.any(ik <= lo) or np.any(ik >= hi)):
            raise ValueError("interior knots must lie strictly inside the boundary")
        if ik.size > 1 and np.any(np.diff(ik) <= 0):
            raise ValueError("interior knots must be strictly increasing")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    @cached_property
    def _aug(self) -> np.ndarray:
        return _augmented_knots(self.boundary, self.interior_knots, self.degree)

    @classmethod
    def from_quantiles(
        cls,
        values,
        n_basis: int = 9,
        degree: int = 3,
        boundary: tuple[float, float] | None = None,
    ) -> "BSplineBasis":
        """Basis with interior knots at quantiles of ``values``.

        Used for the log baseline hazard: ``values`` are observed event
        times, ``boundary`` defaults to [0, max(values)].
        """
        values = np.asarray(values, dtype=float)
        if boundary is None:
            boundary = (0.0, float(values.max()))
        n_interior = n_basis - degree - 1
        if n_interior < 0:
            raise ValueError(f"n_basis={n_basis} too small for degree {degree}")
        probs = np.arange(1, n_interior + 1) / (n_interior + 1)
        knots = np.quantile(values, probs) if n_interior else np.empty(0)
        lo, hi = boundary
        eps = 1e-9 * (hi - lo)
        knots = np.clip(knots, lo + eps, hi - eps)
        # collapse duplicate quantiles (possible with heavily tied values)
        knots = np.unique(knots)
        return cls(degree=degree, interior_knots=tuple(knots), boundary=boundary)

    def design(self, t) -> np.ndarray:
        """Basis matrix at times ``t``; values outside clamp to the boundary."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite evaluation point")
        lo, hi = self.boundary
        return _design(self._aug, self.degree, np.clip(t, lo, hi))

    def design_derivative(self, t, order: int = 1) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite evaluation point")
        lo, hi = self.boundary
        return _design(self._aug, self.degree, np.clip(t, lo, hi), deriv=order)


class NaturalCubicBasis:
    """Natural cubic spline basis with ``df`` columns (no intercept column).

    Interior knots sit at quantiles of the observed times (``df - 1`` of
    them); evaluation outside the boundary knots is linear (first-order
    Taylor continuation from the nearest boundary knot).
    """

    def __init__(self, boundary_knots: tuple[float, float], interior_knots=()):
        lo, hi = float(boundary_knots[0]), float(boundary_knots[1])
        if not lo < hi:
            raise ValueError("boundary knots must satisfy lo < hi")
        interior = tuple(float(k) for k in interior_knots)
        if any(not lo < k < hi for k in interior):
            raise ValueError("interior knots must lie strictly inside the boundary")
        if any(b <= a for a, b in zip(interior, interior[1:])):
            raise ValueError("interior knots must be strictly increasing")
        self.boundary_knots = (lo, hi)
        self.interior_knots = interior
        self.df = len(interior) + 1

        self._aug = _augmented_knots(self.boundary_knots, interior, 3)
        # Natural constraints: zero second derivative at both boundary knots,
        # applied to the basis with its first (intercept-like) column dropped.
        bnd = np.array([lo, hi])
        const = _design(self._aug, 3, bnd, deriv=2)[:, 1:]
        q, _ = np.linalg.qr(const.T, mode="complete")
        self._null = q[:, 2:]  # (n_full - 1, df)
        self._b_lo = _design(self._aug, 3, np.array([lo]))[:, 1:] @ self._null
        self._b_hi = _design(self._aug, 3, np.array([hi]))[:, 1:] @ self._null
        self._d_lo = _design(self._aug, 3, np.array([lo]), deriv=1)[:, 1:] @ self._null
        self._d_hi = _design(self._aug, 3, np.array([hi]), deriv=1)[:, 1:] @ self._null

    @classmethod
    def from_times(cls, times, df: int) -> "NaturalCubicBasis":
        """Knots from quantiles of observed times, boundary at the range."""
        times = np.asarray(times, dtype=float)
        if df < 1:
            raise ValueError("df must be >= 1")
        lo, hi = float(times.min()), float(times.max())
        probs = np.arange(1, df) / df
        interior = np.unique(np.quantile(times, probs)) if df > 1 else np.empty(0)
        eps = 1e-9 * (hi - lo)
        interior = interior[(interior > lo + eps) & (interior < hi - eps)]
        return cls((lo, hi), tuple(interior))

    def __eq__(self, other):
        return (
            isinstance(other, NaturalCubicBasis)
            and self.boundary_knots == other.boundary_knots
            and self.interior_knots == other.interior_knots
        )

    def __hash__(self):
        return hash((self.boundary_knots, self.interior_knots))

    def __repr__(self):
        return (f"NaturalCubicBasis(df={self.df}, boundary={self.boundary_knots}, "
                f"interior={self.interior_knots})")

    def design(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite evaluation point")
        lo, hi = self.boundary_knots
        inside = np.clip(t, lo, hi)
        out = _design(self._aug, 3, inside)[:, 1:] @ self._null
        below = t < lo
        if np.any(below):
            out[below] = self._b_lo + (t[below, None] - lo) * self._d_lo
        above = t > hi
        if np.any(above):
            out[above] = self._b_hi + (t[above, None] - hi) * self._d_hi
        return out


@dataclass(frozen=True)
class PenaltyMatrix:
    """P = Dᵀ D for the order-th difference operator D."""

    order: int
    matrix: np.ndarray = field(compare=False)

    def quadratic_form(self, coefs) -> float:
        coefs = np.asarray(coefs, dtype=float)
        return float(coefs @ self.matrix @ coefs)


def penalty(order: int, size: int) -> PenaltyMatrix:
    """Difference penalty of the given order for ``size`` coefficients."""
    if size <= order:
        raise ValueError(f"size ({size}) must exceed order ({order})")
    d = np.diff(np.eye(size), n=order, axis=0)
    return PenaltyMatrix(order=order, matrix=d.T @ d)


def bspline_eval(basis: BSplineBasis, t: float) -> np.ndarray:
    """Basis values at a single time point."""
    return basis.design(t)[0]


def ncs_eval(basis: NaturalCubicBasis, t: float) -> np.ndarray:
    """Natural cubic basis values at a single time point."""
    return basis.design(t)[0]
