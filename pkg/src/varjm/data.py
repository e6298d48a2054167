"""Core data containers: long-format longitudinal measurements plus survival.

A dataset couples repeated marker measurements (possibly several outcomes,
keyed by name) with one survival record per subject. Everything is immutable
after construction and validated on the way in: times must be strictly
increasing within subject and outcome, no observation may fall after the
subject's event/censoring time, and every observed subject needs exactly one
survival record.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

__all__ = [
    "Observation",
    "SurvivalRecord",
    "LongitudinalDataset",
    "SubjectView",
    "IngestReport",
    "SchemaError",
    "ValidationError",
    "ingest",
    "emit",
    "subject_view",
]

LONG_COLUMNS = ("subject", "outcome", "time", "value")
SURV_COLUMNS = ("subject", "event_time", "status")


class SchemaError(ValueError):
    """A declared column is missing or unparseable."""


class ValidationError(ValueError):
    """The data violate a dataset invariant."""


@dataclass(frozen=True)
class Observation:
    subject_id: str
    outcome: str
    time: float
    value: float

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time < 0:
            raise ValidationError(
                f"subject {self.subject_id!r}: time must be finite and >= 0, got {self.time}")
        if not np.isfinite(self.value):
            raise ValidationError(
                f"subject {self.subject_id!r}: non-finite value at time {self.time}")


@dataclass(frozen=True)
class SurvivalRecord:
    subject_id: str
    event_time: float
    status: int  # 1 = event, 0 = censored
    covariates: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not np.isfinite(self.event_time) or self.event_time <= 0:
            raise ValidationError(
                f"subject {self.subject_id!r}: event_time must be finite and > 0")
        if self.status not in (0, 1):
            raise ValidationError(
                f"subject {self.subject_id!r}: status must be 0 or 1, got {self.status}")


@dataclass(frozen=True)
class SubjectView:
    """Per-subject slice; holds copies, shares nothing with the dataset."""

    subject_id: str
    observations: dict  # outcome -> (times, values) arrays
    event_time: float
    status: int
    covariates: dict


@dataclass
class IngestReport:
    n_rows_read: int = 0
    n_rows_dropped: int = 0
    dropped_subjects: tuple[str, ...] = ()
    messages: tuple[str, ...] = ()


@dataclass(frozen=True)
class _OutcomeArrays:
    subject_idx: np.ndarray  # int, sorted (subject, time)
    time: np.ndarray
    value: np.ndarray


class LongitudinalDataset:
    """Validated, immutable container for observations and survival records."""

    def __init__(self, observations, survival):
        surv_by_id: dict[str, SurvivalRecord] = {}
        for rec in survival:
            if rec.subject_id in surv_by_id:
                raise ValidationError(f"duplicate survival record for {rec.subject_id!r}")
            surv_by_id[rec.subject_id] = rec

        for obs in observations:
            rec = surv_by_id.get(obs.subject_id)
            if rec is None:
                raise ValidationError(
                    f"subject {obs.subject_id!r} has observations but no survival record")
            if obs.time > rec.event_time:
                raise ValidationError(
                    f"subject {obs.subject_id!r}: observation at time {obs.time} "
                    f"after event_time {rec.event_time}")

        self.subject_ids: tuple[str, ...] = tuple(sorted(surv_by_id))
        index = {sid: i for i, sid in enumerate(self.subject_ids)}
        self._index = index

        n = len(self.subject_ids)
        self.event_time = np.array([surv_by_id[s].event_time for s in self.subject_ids])
        self.status = np.array([surv_by_id[s].status for s in self.subject_ids], dtype=int)
        cov_names: tuple[str, ...] = ()
        if n:
            cov_names = tuple(name for name, _ in surv_by_id[self.subject_ids[0]].covariates)
        for s in self.subject_ids:
            names = tuple(name for name, _ in surv_by_id[s].covariates)
            if names != cov_names:
                raise ValidationError(
                    f"subject {s!r}: covariates {names} differ from {cov_names}")
        self.covariate_names = cov_names
        self.covariates = np.array(
            [[v for _, v in surv_by_id[s].covariates] for s in self.subject_ids]
        ).reshape(n, len(cov_names))

        by_outcome: dict[str, list[Observation]] = {}
        for obs in observations:
            by_outcome.setdefault(obs.outcome, []).append(obs)
        self._outcomes: dict[str, _OutcomeArrays] = {}
        for outcome in sorted(by_outcome):
            rows = by_outcome[outcome]
            sidx = np.array([index[o.subject_id] for o in rows], dtype=np.intp)
            time = np.array([o.time for o in rows])
            value = np.array([o.value for o in rows])
            order = np.lexsort((time, sidx))
            sidx, time, value = sidx[order], time[order], value[order]
            same = sidx[1:] == sidx[:-1]
            if np.any(same & (np.diff(time) <= 0)):
                k = int(np.flatnonzero(same & (np.diff(time) <= 0))[0])
                raise ValidationError(
                    f"duplicate ({self.subject_ids[sidx[k]]!r}, {outcome!r}, "
                    f"time={time[k + 1]}) observation")
            self._outcomes[outcome] = _OutcomeArrays(sidx, time, value)

    # -- basic accessors ---------------------------------------------------

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def outcomes(self) -> tuple[str, ...]:
        return tuple(self._outcomes)

    def n_observations(self, outcome: str | None = None) -> int:
        if outcome is not None:
            return self._arrays(outcome).time.size
        return sum(a.time.size for a in self._outcomes.values())

    def subject_index(self, subject_id: str) -> int:
        try:
            return self._index[subject_id]
        except KeyError:
            raise KeyError(f"unknown subject {subject_id!r}") from None

    def _arrays(self, outcome: str) -> _OutcomeArrays:
        try:
            return self._outcomes[outcome]
        except KeyError:
            raise KeyError(f"unknown outcome {outcome!r}; have {self.outcomes}") from None

    def observation_arrays(self, outcome: str):
        """(subject_idx, times, values) copies, sorted by (subject, time)."""
        a = self._arrays(outcome)
        return a.subject_idx.copy(), a.time.copy(), a.value.copy()

    def with_outcome(self, outcome: str, subject_idx, times, values) -> "LongitudinalDataset":
        """New dataset sharing the survival records plus one more outcome."""
        obs = self._all_observations()
        ids = self.subject_ids
        obs.extend(
            Observation(ids[i], outcome, float(t), float(v))
            for i, t, v in zip(subject_idx, times, values)
        )
        return LongitudinalDataset(obs, self._all_survival())

    def _all_observations(self) -> list[Observation]:
        out = []
        for outcome, a in self._outcomes.items():
            out.extend(
                Observation(self.subject_ids[i], outcome, float(t), float(v))
                for i, t, v in zip(a.subject_idx, a.time, a.value)
            )
        return out

    def _all_survival(self) -> list[SurvivalRecord]:
        return [
            SurvivalRecord(
                sid,
                float(self.event_time[i]),
                int(self.status[i]),
                tuple(zip(self.covariate_names, self.covariates[i])),
            )
            for i, sid in enumerate(self.subject_ids)
        ]

    def __eq__(self, other):
        if not isinstance(other, LongitudinalDataset):
            return NotImplemented
        if self.subject_ids != other.subject_ids or self.outcomes != other.outcomes:
            return False
        if not (
            np.array_equal(self.event_time, other.event_time)
            and np.array_equal(self.status, other.status)
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.covariates, other.covariates)
        ):
            return False
        for outcome in self.outcomes:
            a, b = self._arrays(outcome), other._arrays(outcome)
            if not (
                np.array_equal(a.subject_idx, b.subject_idx)
                and np.array_equal(a.time, b.time)
                and np.array_equal(a.value, b.value)
            ):
                return False
        return True


def subject_view(ds: LongitudinalDataset, subject_id: str) -> SubjectView:
    """Copy of one subject's rows and survival record."""
    i = ds.subject_index(subject_id)
    per_outcome = {}
    for outcome in ds.outcomes:
        a = ds._arrays(outcome)
        mask = a.subject_idx == i
        if np.any(mask):
            per_outcome[outcome] = (a.time[mask].copy(), a.value[mask].copy())
    return SubjectView(
        subject_id=subject_id,
        observations=per_outcome,
        event_time=float(ds.event_time[i]),
        status=int(ds.status[i]),
        covariates=dict(zip(ds.covariate_names, ds.covariates[i])),
    )


# -- delimited-text interface ---------------------------------------------


def _remap(df: pd.DataFrame, schema: dict | None, required, path: str) -> pd.DataFrame:
    schema = schema or {}
    rename = {v: k for k, v in schema.items() if v in df.columns}
    df = df.rename(columns=rename)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; have {list(df.columns)}")
    return df


def ingest(
    long_path,
    survival_path,
    schema: dict | None = None,
) -> tuple[LongitudinalDataset, IngestReport]:
    """Read the two delimited files and build a validated dataset.

    ``schema`` remaps canonical column names to the file's actual names,
    e.g. ``{"subject": "id", "value": "wbc"}``. Rows with missing time or
    value are dropped (counted in the report); subjects left with no rows
    are dropped entirely, along with their survival record.
    """
    long_df = pd.read_csv(long_path, float_precision="round_trip")
    surv_df = pd.read_csv(survival_path, float_precision="round_trip")
    long_df = _remap(long_df, schema, LONG_COLUMNS, str(long_path))
    surv_df = _remap(surv_df, schema, SURV_COLUMNS, str(surv_path := survival_path))

    n_read = len(long_df)
    for col in ("time", "value"):
        long_df[col] = pd.to_numeric(long_df[col], errors="coerce")
    keep = long_df[["time", "value"]].notna().all(axis=1)
    n_dropped = int((~keep).sum())
    long_df = long_df[keep]

    observed = set(long_df["subject"].astype(str))
    all_subjects = set(surv_df["subject"].astype(str))
    dropped_subjects = tuple(sorted(all_subjects - observed))
    if dropped_subjects:
        surv_df = surv_df[~surv_df["subject"].astype(str).isin(dropped_subjects)]

    try:
        surv_df["event_time"] = pd.to_numeric(surv_df["event_time"])
        surv_df["status"] = pd.to_numeric(surv_df["status"])
    except ValueError as exc:
        raise SchemaError(f"{surv_path}: numeric field failed to parse: {exc}") from exc
    cov_cols = [c for c in surv_df.columns if c not in SURV_COLUMNS]

    survival = [
        SurvivalRecord(
            subject_id=str(row["subject"]),
            event_time=float(row["event_time"]),
            status=int(row["status"]),
            covariates=tuple((c, float(row[c])) for c in cov_cols),
        )
        for _, row in surv_df.iterrows()
    ]
    observations = [
        Observation(
            subject_id=str(row["subject"]),
            outcome=str(row["outcome"]),
            time=float(row["time"]),
            value=float(row["value"]),
        )
        for _, row in long_df.iterrows()
    ]
    ds = LongitudinalDataset(observations, survival)

    messages = []
    if n_dropped:
        messages.append(f"dropped {n_dropped} rows with missing time/value")
        logger.info("ingest: dropped %d rows with missing time/value", n_dropped)
    if dropped_subjects:
        messages.append(f"dropped {len(dropped_subjects)} subjects with no usable rows")
        logger.info("ingest: dropped subjects %s", dropped_subjects)
    report = IngestReport(
        n_rows_read=n_read,
        n_rows_dropped=n_dropped,
        dropped_subjects=dropped_subjects,
        messages=tuple(messages),
    )
    return ds, report


def emit(ds: LongitudinalDataset, long_path, survival_path) -> None:
    """Write the dataset back to the two delimited files (round-trip exact)."""
    rows = []
    for outcome in ds.outcomes:
        sidx, time, value = ds.observation_arrays(outcome)
        rows.extend(
            (ds.subject_ids[i], outcome, repr(float(t)), repr(float(v)))
            for i, t, v in zip(sidx, time, value)
        )
    with open(long_path, "w") as fh:
        fh.write(",".join(LONG_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    with open(survival_path, "w") as fh:
        fh.write(",".join(SURV_COLUMNS + ds.covariate_names) + "\n")
        for i, sid in enumerate(ds.subject_ids):
            cells = [sid, repr(float(ds.event_time[i])), str(int(ds.status[i]))]
            cells += [repr(float(v)) for v in ds.covariates[i]]
            fh.write(",".join(cells) + "\n")
