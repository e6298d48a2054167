"""Adaptive random-walk Metropolis-within-Gibbs engine.

The engine sweeps a fixed list of shared parameter blocks (random-walk
proposals with Robbins-Monro scale tuning and an adaptive proposal
covariance learned during warmup) followed by one vectorized update of all
per-subject blocks. Adaptation freezes when warmup ends, so the kept draws
come from a fixed transition kernel. Everything is deterministic given the
chain's RNG.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ChainResult", "run_chain", "DEFAULT_BLOCK_SCALES"]

DEFAULT_BLOCK_SCALES = {
    "beta": 0.05,
    "gamma": 0.05,
    "alpha": 0.01,
    "spline": 0.05,
    "smooth": 0.25,
    "tau": 0.05,
    "omega": 0.1,
    "recenter": 0.3,
    "subjects": 0.6,
}

TARGET_SCALAR = 0.44
TARGET_VECTOR = 0.234


@dataclass
class _BlockAdapter:
    name: str
    size: int
    log_scale: float
    target: float
    frozen: bool = False
    fixed_shape: bool = False  # proposal shape supplied by the model
    n_update: int = 0
    n_prop_kept: int = 0
    n_acc_kept: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None
    n_hist: int = 0
    chol: np.ndarray = None

    def __post_init__(self):
        self.mean = np.zeros(self.size)
        self.m2 = np.zeros((self.size, self.size))

    def propose(self, current: np.ndarray, rng) -> np.ndarray:
        z = rng.standard_normal(self.size)
        if self.chol is not None:
            z = self.chol @ z
        return current + np.exp(self.log_scale) * z

    def adapt(self, accepted: bool, value: np.ndarray, collect: bool) -> None:
        """Robbins-Monro scale tuning; proposal covariance learned only once
        ``collect`` turns on (the early-warmup transient would pollute it)."""
        self.n_update += 1
        # floored gain: stays responsive through the whole warmup
        gamma = max(0.03, self.n_update ** -0.55)
        self.log_scale += gamma * ((1.0 if accepted else 0.0) - self.target)
        self.log_scale = float(np.clip(self.log_scale, -15.0, 5.0))
        if not collect or self.fixed_shape:
            return
        self.n_hist += 1
        d = value - self.mean
        self.mean += d / self.n_hist
        self.m2 += np.outer(d, value - self.mean)
        if self.size > 1 and self.n_hist >= max(40, 4 * self.size) \
                and self.n_hist % 25 == 0:
            cov = self.m2 / (self.n_hist - 1)
            scale = np.trace(cov) / self.size
            if scale > 0:
                cov = cov + 1e-6 * scale * np.eye(self.size)
                try:
                    chol = np.linalg.cholesky(cov)
                    # normalize so log_scale keeps its meaning
                    self.chol = chol / np.sqrt(scale)
                except np.linalg.LinAlgError:
                    pass


@dataclass
class ChainResult:
    draws: np.ndarray                  # (n_kept, n_report)
    re_mean: np.ndarray                # (n_subjects, q_tot) posterior mean
    acceptance: dict[str, float]       # post-warmup rates per block
    n_warmup: int
    n_kept: int


def run_chain(
    model,
    rng,
    n_warmup: int,
    n_kept: int,
    initial_scales: dict | None = None,
    frozen_blocks: tuple[str, ...] = (),
    deadline: float | None = None,
) -> ChainResult:
    """Run one chain; ``model`` implements the JointTarget block interface."""
    scales_cfg = dict(DEFAULT_BLOCK_SCALES)
    if initial_scales:
        scales_cfg.update(initial_scales)

    blocks = []
    shape_fn = getattr(model, "block_proposal_chol", lambda name: None)
    for name in model.shared_block_names():
        size = model.get_block(name).size
        kind = name.split(".")[0]
        scale0 = scales_cfg.get(name, scales_cfg.get(kind, 0.1))
        blk = _BlockAdapter(
            name=name,
            size=size,
            log_scale=float(np.log(scale0)),
            target=TARGET_SCALAR if size == 1 else TARGET_VECTOR,
            frozen=name in frozen_blocks,
        )
        shape = shape_fn(name)
        if shape is not None:
            blk.chol = shape
            blk.fixed_shape = True
        blocks.append(blk)

    n_subj = model.n_subjects
    subj_frozen = "subjects" in frozen_blocks
    subj_log_scale = np.full(n_subj, np.log(scales_cfg.get("subjects", 0.6)))
    subj_acc_kept = 0
    subj_prop_kept = 0

    n_report = model.report_values().size
    draws = np.empty((n_kept, n_report))
    re_mean = np.zeros_like(model.re_snapshot(), dtype=float) if n_subj else np.zeros((0, 0))

    total = n_warmup + n_kept
    cov_start = n_warmup // 3  # scale-only tuning before this sweep
    for sweep in range(total):
        warm = sweep < n_warmup
        if deadline is not None and sweep % 64 == 0 and time.monotonic() > deadline:
            raise TimeoutError(f"chain exceeded its deadline at sweep {sweep}/{total}")
        for blk in blocks:
            if blk.frozen:
                continue
            cur = model.get_block(blk.name)
            prop = blk.propose(cur, rng)
            delta = model.block_delta(blk.name, prop)
            if np.log(rng.uniform()) < delta:
                model.block_commit(blk.name)
                cur = prop
                acc = True
            else:
                model.block_reject(blk.name)
                acc = False
            if warm:
                blk.adapt(acc, cur, collect=sweep >= cov_start)
            else:
                blk.n_prop_kept += 1
                blk.n_acc_kept += int(acc)
        if n_subj and not subj_frozen:
            accepted = model.subject_step(rng, np.exp(subj_log_scale))
            if warm:
                gamma = max(0.03, (sweep + 1.0) ** -0.55)
                subj_log_scale += gamma * (accepted.astype(float) - TARGET_VECTOR)
                np.clip(subj_log_scale, -15.0, 5.0, out=subj_log_scale)
            else:
                subj_prop_kept += accepted.size
                subj_acc_kept += int(accepted.sum())
        if not warm:
            k = sweep - n_warmup
            draws[k] = model.report_values()
            if n_subj:
                re_mean += model.re_snapshot()

    if n_subj and n_kept:
        re_mean /= n_kept

    acceptance = {
        blk.name: (blk.n_acc_kept / blk.n_prop_kept if blk.n_prop_kept else np.nan)
        for blk in blocks if not blk.frozen
    }
    if n_subj and not subj_frozen and subj_prop_kept:
        acceptance["subjects"] = subj_acc_kept / subj_prop_kept

    return ChainResult(
        draws=draws,
        re_mean=re_mean,
        acceptance=acceptance,
        n_warmup=n_warmup,
        n_kept=n_kept,
    )
