"""Replicate harness: simulate, fit the two-step pipeline, aggregate metrics.

Each replicate simulates one dataset, runs Step 1 (homoscedastic mixed model
on the marker, absolute residuals extracted), builds the two-outcome joint
model and samples its posterior. The study summary reports, per parameter,
the mean of the posterior means, bias, empirical standard error, mean
posterior SD, and 95% credible-interval coverage, with the per-parameter
R-hat exclusion rule applied to the association coefficients only.
"""

from __future__ import annotations

import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .joint import JointModelSpec, LongitudinalSubmodel, SurvivalSpec
from .lmm import LmmSpec, fit_lmm, residuals, variability_dataset
from .mcmc import SamplerConfig, sample
from .simulate import ScenarioConfig, simulate_dataset
from .terms import Intercept, LinearTime, QuadCentered, TrajectoryDesign

logger = logging.getLogger(__name__)

__all__ = [
    "ReplicateResult",
    "StudySummary",
    "SummaryRow",
    "SD_OUTCOME",
    "replicate_seed",
    "two_step_spec",
    "run_replicate",
    "run_study",
    "summarize_study",
    "true_parameter_values",
    "ALPHA_PARAMS",
]

SD_OUTCOME = "marker_sd"
ALPHA_PARAMS = ("assoc.marker", f"assoc.{SD_OUTCOME}")
RHAT_THRESHOLD = 1.1


@dataclass
class ReplicateResult:
    replicate: int
    seed: int
    failed: bool
    error: str | None
    runtime_s: float
    event_rate: float | None
    # per parameter: posterior mean, sd, 2.5%, 97.5%, rhat
    params: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "ReplicateResult":
        return cls(**json.loads(text))


@dataclass
class SummaryRow:
    parameter: str
    true_value: float
    mean: float | None
    bias: float | None
    ese: float | None
    mpsd: float | None
    cr_pct: float | None
    n_included: int
    n_excluded: int


@dataclass
class StudySummary:
    rows: list
    n_replicates: int
    n_failed: int
    rhat_threshold: float

    def row(self, parameter: str) -> SummaryRow:
        for r in self.rows:
            if r.parameter == parameter:
                return r
        raise KeyError(parameter)


def replicate_seed(master_seed: int, replicate: int) -> int:
    """Deterministic per-replicate seed from (master seed, index)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(replicate,))
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFFFFFF)


def _marker_design(scenario: ScenarioConfig) -> TrajectoryDesign:
    terms = [Intercept(), LinearTime()]
    if scenario.trajectory == "quadratic":
        terms.append(QuadCentered(scenario.quad_center))
    return TrajectoryDesign(tuple(terms))


def two_step_spec(scenario: ScenarioConfig, ds) -> JointModelSpec:
    """Joint model for one replicate: marker + absolute-residual outcome."""
    marker = _marker_design(scenario)
    sd_design = TrajectoryDesign((Intercept(), LinearTime()))
    return JointModelSpec(
        submodels=(
            LongitudinalSubmodel("marker", fixed=marker, random=marker),
            LongitudinalSubmodel(SD_OUTCOME, fixed=sd_design, random=sd_design),
        ),
        survival=SurvivalSpec.from_data(ds),
    )


def run_replicate(
    scenario: ScenarioConfig,
    replicate: int,
    sampler_cfg: SamplerConfig,
    master_seed: int = 0,
    timeout_min: float = 30.0,
    residual_kind: str = "absolute",
) -> ReplicateResult:
    """Simulate + two-step fit; failures are captured, never raised."""
    seed = replicate_seed(master_seed, replicate)
    t0 = time.monotonic()
    try:
        sim = simulate_dataset(replace(scenario, seed=seed))
        ds = sim.dataset
        marker = _marker_design(scenario)
        step1 = fit_lmm(ds, LmmSpec(fixed=marker, random=marker,
                                    outcome="marker"), method="reml")
        resid = residuals(step1, ds)
        ds2 = variability_dataset(ds, resid, kind=residual_kind,
                                  outcome=SD_OUTCOME)
        spec = two_step_spec(scenario, ds2)
        cfg = replace(sampler_cfg, seed=seed + 1)
        deadline = timeout_min * 60.0 - (time.monotonic() - t0)
        if deadline <= 0:
            raise TimeoutError("replicate exceeded its time budget before sampling")
        fit = sample(spec, ds2, cfg, deadline_s=deadline)
        params = {
            name: {
                "mean": s.mean, "sd": s.sd,
                "q2_5": s.q2_5, "q97_5": s.q97_5, "rhat": s.rhat,
            }
            for name, s in fit.summaries.items()
        }
        return ReplicateResult(
            replicate=replicate, seed=seed, failed=False, error=None,
            runtime_s=time.monotonic() - t0,
            event_rate=sim.manifest["event_rate"], params=params,
        )
    except Exception as exc:  # noqa: BLE001 - replicate isolation contract
        logger.warning("replicate %d failed: %s", replicate, exc)
        return ReplicateResult(
            replicate=replicate, seed=seed, failed=True,
            error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=5)}",
            runtime_s=time.monotonic() - t0, event_rate=None, params={},
        )


def _worker(args):
    return run_replicate(*args)


def run_study(
    scenario: ScenarioConfig,
    n_replicates: int,
    sampler_cfg: SamplerConfig | None = None,
    master_seed: int = 0,
    jobs: int = 1,
    out_dir: str | None = None,
    timeout_min: float = 30.0,
    resume: bool = False,
    residual_kind: str = "absolute",
) -> list[ReplicateResult]:
    """Run replicates (optionally in a worker pool), persisting each result.

    With ``resume`` and an ``out_dir``, completed replicates are loaded from
    disk instead of being recomputed; results are deterministic either way.
    """
    sampler_cfg = sampler_cfg or SamplerConfig()
    out = Path(out_dir) if out_dir else None
    if out:
        (out / "replicates").mkdir(parents=True, exist_ok=True)

    def rep_path(k):
        return out / "replicates" / f"rep_{k:04d}.json" if out else None

    results: dict[int, ReplicateResult] = {}
    todo = []
    for k in range(n_replicates):
        path = rep_path(k)
        if resume and path and path.exists():
            results[k] = ReplicateResult.from_json(path.read_text())
        else:
            todo.append(k)

    def record(res: ReplicateResult):
        results[res.replicate] = res
        path = rep_path(res.replicate)
        if path:
            tmp = path.with_suffix(".tmp")
            tmp.write_text(res.to_json())
            tmp.replace(path)
        logger.info("replicate %d done in %.1fs%s", res.replicate,
                    res.runtime_s, " (FAILED)" if res.failed else "")

    args = [(scenario, k, sampler_cfg, master_seed, timeout_min, residual_kind)
            for k in todo]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_worker, args):
                record(res)
    else:
        for a in args:
            record(run_replicate(*a))

    ordered = [results[k] for k in sorted(results)]
    n_failed = sum(r.failed for r in ordered)
    if n_failed:
        logger.warning("%d/%d replicates failed", n_failed, len(ordered))
    return ordered


def true_parameter_values(scenario: ScenarioConfig) -> dict:
    """Generative truths for the parameters the study tables report."""
    out = {f"marker.beta.{j}": float(v) for j, v in enumerate(scenario.beta)}
    out["assoc.marker"] = float(scenario.alpha_m)
    out[f"assoc.{SD_OUTCOME}"] = float(scenario.alpha_sigma)
    return out


def summarize_study(
    results,
    true_values: dict,
    rhat_threshold: float = RHAT_THRESHOLD,
    alpha_params: tuple = ALPHA_PARAMS,
) -> StudySummary:
    """Mean/Bias/ESE/MPSD/CR per parameter over the included replicates.

    The R-hat exclusion rule applies per parameter and only to the
    association coefficients; a non-finite R-hat (sentinel) also excludes.
    All replicates that failed outright are excluded everywhere.
    """
    ok = [r for r in results if not r.failed]
    rows = []
    for name, truth in true_values.items():
        usable = [r for r in ok if name in r.params]
        if name in alpha_params:
            included = [
                r for r in usable
                if np.isfinite(r.params[name]["rhat"])
                and r.params[name]["rhat"] <= rhat_threshold
            ]
        else:
            included = usable
        n_exc = len(usable) - len(included)
        if len(included) < 2:
            rows.append(SummaryRow(
                parameter=name, true_value=truth, mean=None, bias=None,
                ese=None, mpsd=None, cr_pct=None,
                n_included=len(included), n_excluded=n_exc,
            ))
            continue
        means = np.array([r.params[name]["mean"] for r in included])
        sds = np.array([r.params[name]["sd"] for r in included])
        lo = np.array([r.params[name]["q2_5"] for r in included])
        hi = np.array([r.params[name]["q97_5"] for r in included])
        mean = float(means.mean())
        rows.append(SummaryRow(
            parameter=name,
            true_value=truth,
            mean=mean,
            bias=mean - truth,
            ese=float(means.std(ddof=1)),
            mpsd=float(sds.mean()),
            cr_pct=float(100.0 * np.mean((lo <= truth) & (truth <= hi))),
            n_included=len(included),
            n_excluded=n_exc,
        ))
    return StudySummary(
        rows=rows,
        n_replicates=len(results),
        n_failed=sum(r.failed for r in results),
        rhat_threshold=rhat_threshold,
    )
