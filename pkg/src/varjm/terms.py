"""Time-design terms shared by the mixed and joint longitudinal submodels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import NaturalCubicBasis

__all__ = [
    "Intercept",
    "LinearTime",
    "QuadCentered",
    "SplineTime",
    "TrajectoryDesign",
    "parse_terms",
]


@dataclass(frozen=True)
class Intercept:
    @property
    def names(self):
        return ("1",)

    def columns(self, t: np.ndarray) -> np.ndarray:
        return np.ones((t.size, 1))


@dataclass(frozen=True)
class LinearTime:
    @property
    def names(self):
        return ("t",)

    def columns(self, t: np.ndarray) -> np.ndarray:
        return t[:, None]


@dataclass(frozen=True)
class QuadCentered:
    """(t - center)² term, e.g. curvature centered at time 2."""

    center: float

    @property
    def names(self):
        return (f"(t-{self.center:g})^2",)

    def columns(self, t: np.ndarray) -> np.ndarray:
        return ((t - self.center) ** 2)[:, None]


@dataclass(frozen=True)
class SplineTime:
    """Natural cubic spline expansion of time (df columns)."""

    basis: NaturalCubicBasis

    @property
    def names(self):
        return tuple(f"ncs{k + 1}" for k in range(self.basis.df))

    def columns(self, t: np.ndarray) -> np.ndarray:
        return self.basis.design(t)


@dataclass(frozen=True)
class TrajectoryDesign:
    """Ordered collection of time terms mapped to design columns."""

    terms: tuple

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for term in self.terms for n in term.names)

    @property
    def ncol(self) -> int:
        return len(self.names)

    def design(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self.terms:
            return np.zeros((t.size, 0))
        return np.hstack([term.columns(t) for term in self.terms])

    def is_subset_of(self, other: "TrajectoryDesign") -> bool:
        return all(term in other.terms for term in self.terms)

    def has_intercept(self) -> bool:
        return any(isinstance(term, Intercept) for term in self.terms)


def parse_terms(tokens, times=None) -> TrajectoryDesign:
    """Build a design from compact tokens.

    Grammar: ``"1"`` intercept, ``"t"`` linear time, ``"quad@<center>"``
    centered quadratic, ``"ncs@<df>"`` natural cubic spline (knots from the
    observed ``times``, which must then be supplied).
    """
    terms = []
    for tok in tokens:
        tok = tok.strip()
        if tok == "1":
            terms.append(Intercept())
        elif tok == "t":
            terms.append(LinearTime())
        elif tok.startswith("quad@"):
            terms.append(QuadCentered(center=float(tok.split("@", 1)[1])))
        elif tok.startswith("ncs@"):
            df = int(tok.split("@", 1)[1])
            if times is None:
                raise ValueError(f"term {tok!r} needs observed times for knots")
            terms.append(SplineTime(basis=NaturalCubicBasis.from_times(times, df)))
        else:
            raise ValueError(f"unknown term {tok!r}")
    return TrajectoryDesign(terms=tuple(terms))
