"""Closed-form identification of the primitives and the resampling loop."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleMomentsError, PanelError, ReplicateFailureError, SortEqError
from .measure import measure_moments, resample
from .model import PARAM_NAMES, ModelParams, solve_equilibrium
from .moments import MomentSet, mean_log_wage
from .simulate import Panel

CI_LEVELS = (2.5, 97.5)


def identify(moments: MomentSet) -> tuple[ModelParams, float]:
    """Invert the five moments into ``(sigma_x, sigma_theta, c_a, c_l, ln_A)`` and ``sigma``.

    Raises:
        InfeasibleMomentsError: naming the violated inequality.
    """
    wfwi, vov = moments.wfwi_weighted, moments.var_of_within_var
    unw, var_w = moments.wfwi_unweighted, moments.var_log_wage
    vals = (wfwi, vov, unw, var_w, moments.mean_log_wage)
    if not all(math.isfinite(v) for v in vals):
        raise InfeasibleMomentsError(f"non-finite moment in {moments}")
    if wfwi <= 0.0 or vov < 0.0 or unw <= 0.0:
        raise InfeasibleMomentsError(f"need wfwi > 0, vov >= 0, unweighted wfwi > 0; got {wfwi}, {vov}, {unw}")
    a, b = math.sqrt(2.0) * wfwi, math.sqrt(vov)
    if not a > b:
        raise InfeasibleMomentsError(f"need sqrt(2) wfwi > sqrt(vov); got {a:.6g} <= {b:.6g} (wfwi={wfwi}, vov={vov})")
    # sigma^2 - 1 and sigma^2 - 1 - sigma_theta^2 are formed directly from the
    # moments; differencing the recovered levels loses digits near the
    # boundaries sigma -> 1 and alpha -> 0.
    excess = 0.5 * b / (a - b)
    sigma_sq = 1.0 + excess
    if not excess > 0.0:
        raise InfeasibleMomentsError(f"implied sigma^2 = {sigma_sq!r} is not above 1 (vov={vov})")
    sigma = math.sqrt(sigma_sq)
    sigma_x = math.sqrt(2.0 * wfwi / (2.0 - 1.0 / sigma_sq))
    if not sigma > sigma_x:
        raise InfeasibleMomentsError(f"implied sigma = {sigma:.6g} does not exceed sigma_x = {sigma_x:.6g}")
    st_sq = 0.5 * (unw / wfwi * (2.0 * sigma_sq - 1.0) - 1.0)
    if not st_sq > 0.0:
        raise InfeasibleMomentsError(f"implied sigma_theta^2 = {st_sq:.6g} <= 0 (unweighted wfwi={unw}, wfwi={wfwi})")
    gap = (2.0 * sigma_sq - 1.0) * (wfwi - unw) / (2.0 * wfwi)  # sigma^2 - 1 - sigma_theta^2
    if not gap > 0.0:
        raise InfeasibleMomentsError(
            f"need sigma^2 - 1 > sigma_theta^2, i.e. wfwi > unweighted wfwi; got {wfwi} <= {unw}")
    sigma_theta = math.sqrt(st_sq)
    alpha = (sigma / sigma_x - 1.0) * gap / (st_sq * excess)
    rho_sq = 1.0 - 1.0 / sigma_sq
    bfwi = var_w - wfwi
    if not bfwi > 0.0:
        raise InfeasibleMomentsError(f"need var_log_wage > wfwi; got {var_w} <= {wfwi}")
    ratio = math.sqrt(2.0 * bfwi) / (sigma_x * sigma * rho_sq) - 1.0
    if not ratio > 0.0:
        raise InfeasibleMomentsError(
            f"need sqrt(2 bfwi) > sigma_x sigma rho^2 for c_a > 0; got bfwi={bfwi}, implied ratio {ratio:.6g}")
    c_a = 1.0 / (ratio * (1.0 - sigma_x / sigma))
    c_l = (1.0 + 1.0 / c_a) / alpha
    base = ModelParams(sigma_x=sigma_x, sigma_theta=sigma_theta, c_a=c_a, c_l=c_l, ln_A=0.0)
    eq0 = solve_equilibrium(base)
    ln_a = 0.5 * (moments.mean_log_wage - mean_log_wage(eq0, base))
    return base.replace(ln_A=ln_a), sigma


@dataclass
class CalibrationResult:
    """Bootstrap calibration output.

    ``params`` and ``sigma`` are replicate means; ``full_sample`` is the
    point estimate on the original panel (``None`` if it failed).
    """

    params: ModelParams
    sigma: float
    per_replicate: list  # (ModelParams, sigma) per successful replicate
    ci_low: ModelParams
    ci_high: ModelParams
    sigma_ci: tuple
    n_replicates: int
    seeds: list
    failures: list = field(default_factory=list)  # (replicate index, message)
    full_sample: Optional[tuple] = None

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def to_dict(self):
        return {
            "params": self.params.to_dict(), "sigma": self.sigma,
            "ci_low": self.ci_low.to_dict(), "ci_high": self.ci_high.to_dict(),
            "sigma_ci": list(self.sigma_ci), "n_replicates": self.n_replicates,
            "n_succeeded": len(self.per_replicate), "n_failed": self.n_failed,
            "failures": [{"replicate": i, "error": msg} for i, msg in self.failures],
            "full_sample": None if self.full_sample is None else
            {"params": self.full_sample[0].to_dict(), "sigma": self.full_sample[1]},
            "seeds": [int(s) for s in self.seeds],
        }

    def replicate_matrix(self) -> np.ndarray:
        """Rows of ``(sigma_x, sigma_theta, c_a, c_l, ln_A, sigma)`` per replicate."""
        return np.array([[getattr(p, k) for k in PARAM_NAMES] + [s] for p, s in self.per_replicate])


def replicate_seeds(seed: int, n: int, stream: int = 0) -> list[int]:
    """Independent 64-bit seeds for ``n`` replicates derived from one master seed.

    Different ``stream`` values give unrelated seed lists for the same master
    seed (used when two panels are resampled side by side).
    """
    seq = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=(int(stream),))
    state = seq.generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def calibrate_replicate(panel: Panel, seed: int, min_firm_size: int = 5) -> tuple[ModelParams, float]:
    return identify(measure_moments(resample(panel, seed), min_firm_size).moment_set())


def run_replicates(panel: Panel, seeds: Sequence[int], func, *, threads: int = 1) -> list:
    """Apply ``func(panel, seed)`` to every seed; return ``(ok, value_or_message)`` in seed order."""

    def task(s):
        try:
            return True, func(panel, s)
        except (SortEqError, ArithmeticError, ValueError) as exc:
            return False, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(task, seeds))
    return [task(s) for s in seeds]


def bootstrap_calibrate(panel: Panel, n_replicates: int, seed: int = 0, min_firm_size: int = 5, *,
                        seeds: Optional[Sequence[int]] = None, threads: int = 1) -> CalibrationResult:
    """Calibrate on ``n_replicates`` resampled panels and form percentile intervals.

    Replicates whose moments cannot be inverted are excluded and listed in
    ``failures``.

    Raises:
        ValueError: if ``n_replicates < 2``.
        ReplicateFailureError: if more than half of the replicates fail.
    """
    if n_replicates < 2:
        raise ValueError("n_replicates must be at least 2")
    if seeds is None:
        seeds = replicate_seeds(seed, n_replicates)
    elif len(seeds) != n_replicates:
        raise ValueError("len(seeds) must equal n_replicates")
    outcomes = run_replicates(panel, seeds, lambda p, s: calibrate_replicate(p, s, min_firm_size), threads=threads)
    good = [val for ok, val in outcomes if ok]
    failures = [(i, val) for i, (ok, val) in enumerate(outcomes) if not ok]
    if 2 * len(failures) > n_replicates:
        first = failures[0][1] if failures else ""
        raise ReplicateFailureError(f"{len(failures)} of {n_replicates} replicates failed; first: {first}")
    mat = np.array([[getattr(p, k) for k in PARAM_NAMES] + [s] for p, s in good])
    mean = mat.mean(axis=0)
    lo, hi = np.percentile(np.sort(mat, axis=0), CI_LEVELS, axis=0)
    try:
        full = identify(measure_moments(panel, min_firm_size).moment_set())
    except (SortEqError, ArithmeticError, PanelError):
        full = None

    def as_params(row):
        return ModelParams(**{k: float(v) for k, v in zip(PARAM_NAMES, row[:5])})

    return CalibrationResult(params=as_params(mean), sigma=float(mean[5]), per_replicate=good,
                             ci_low=as_params(lo), ci_high=as_params(hi), sigma_ci=(float(lo[5]), float(hi[5])),
                             n_replicates=n_replicates, seeds=list(seeds), failures=failures, full_sample=full)
