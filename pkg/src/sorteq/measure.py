"""Wage moments measured on a panel, with resampling and cluster standard errors.

Per-firm statistics are computed with two passes over grouped data
(``np.bincount`` on firm codes), which is deterministic and exact enough for
panels of 10^7 rows.  Only ``worker_id``, ``firm_id`` and ``log_wage`` are
read; latent columns are ignored.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import PanelError
from .moments import MomentSet
from .simulate import Panel


@dataclass(frozen=True)
class FirmStats:
    firm_id: int
    size: int
    mean_lw: float
    var_lw: float
    mu2_hat: float
    mu4_hat: float
    vov_adjustment: float


@dataclass(frozen=True)
class FirmTable:
    """Column-wise per-firm statistics for the retained firms."""

    firm_id: np.ndarray
    size: np.ndarray
    mean_lw: np.ndarray
    var_lw: np.ndarray
    mu2_hat: np.ndarray
    mu4_hat: np.ndarray
    vov_adjustment: np.ndarray
    codes: np.ndarray  # retained-firm index per retained worker
    keep: np.ndarray  # boolean mask over the panel's workers
    n_excluded_firms: int

    def records(self) -> list[FirmStats]:
        return [FirmStats(int(f), int(n), float(m), float(v), float(a), float(b), float(c))
                for f, n, m, v, a, b, c in zip(self.firm_id, self.size, self.mean_lw, self.var_lw,
                                              self.mu2_hat, self.mu4_hat, self.vov_adjustment)]


@dataclass(frozen=True)
class MeasuredMoments:
    wfwi_weighted: float
    var_of_within_var: float
    wfwi_unweighted: float
    var_log_wage: float
    mean_log_wage: float
    bfwi: float
    wfwi: float
    n_workers: int
    n_firms: int
    var_of_within_var_raw: float = float("nan")
    vov_clamped: bool = False
    n_excluded_firms: int = 0
    year_label: int = 0

    def to_dict(self):
        return asdict(self)

    def moment_set(self) -> MomentSet:
        return MomentSet(wfwi_weighted=self.wfwi_weighted, var_of_within_var=self.var_of_within_var,
                         wfwi_unweighted=self.wfwi_unweighted, var_log_wage=self.var_log_wage,
                         mean_log_wage=self.mean_log_wage)


def vov_adjustment(mu2, mu4, n):
    """Sampling variance of a firm's variance estimate, ``mu4/n - mu2^2 (n-3)/(n^2-n)``."""
    n = np.asarray(n, dtype=float)
    return mu4 / n - mu2 * mu2 * (n - 3.0) / (n * n - n)


def firm_table(panel: Panel, min_firm_size: int = 5) -> FirmTable:
    """Per-firm moments of log wages for firms with at least ``max(min_firm_size, 2)`` workers."""
    if panel.n_workers == 0:
        raise PanelError("panel has no workers")
    floor = max(int(min_firm_size), 2)
    codes = panel.firm_codes()
    counts = np.bincount(codes, minlength=panel.n_firms)
    retained = counts >= floor
    n_excluded = int(np.count_nonzero(counts[retained == False] > 0))  # noqa: E712
    if not retained.any():
        raise PanelError(f"no firm has at least {floor} workers")
    keep = retained[codes]
    remap = np.cumsum(retained) - 1
    c = remap[codes[keep]]
    lw = panel.log_wage[keep]
    n = counts[retained].astype(float)
    mean = np.bincount(c, weights=lw) / n
    dev = lw - mean[c]
    dev2 = dev * dev
    mu2 = np.bincount(c, weights=dev2) / n
    mu4 = np.bincount(c, weights=dev2 * dev2) / n
    return FirmTable(firm_id=panel.firm_ids[retained], size=counts[retained].astype(np.int64), mean_lw=mean,
                     var_lw=mu2 * n / (n - 1.0), mu2_hat=mu2, mu4_hat=mu4,
                     vov_adjustment=vov_adjustment(mu2, mu4, n), codes=c, keep=keep,
                     n_excluded_firms=n_excluded)


def firm_statistics(panel: Panel, min_firm_size: int = 5) -> list[FirmStats]:
    return firm_table(panel, min_firm_size).records()


def _moments_from_table(tab: FirmTable, lw: np.ndarray, year_label: int = 0) -> MeasuredMoments:
    n = tab.size.astype(float)
    big_n = n.sum()
    w = n / big_n
    mean = float(np.mean(lw))
    var_all = float(np.var(lw, ddof=1)) if lw.size > 1 else 0.0
    wfwi = float(np.dot(w, tab.var_lw))
    raw = float(np.dot(w, (tab.var_lw - wfwi) ** 2))
    denoised = raw - float(np.dot(w, tab.vov_adjustment))
    clamped = False
    if raw == 0.0:
        warnings.warn("within-firm variances are all equal; variance of variances set to 0", RuntimeWarning,
                      stacklevel=3)
        denoised = 0.0
    elif denoised < 0.0:
        warnings.warn(f"de-noised variance of within-firm variances is negative ({denoised:.3g}); clamped to 0",
                      RuntimeWarning, stacklevel=3)
        denoised, clamped = 0.0, True
    return MeasuredMoments(
        wfwi_weighted=wfwi, var_of_within_var=denoised, wfwi_unweighted=float(np.mean(tab.var_lw)),
        var_log_wage=var_all, mean_log_wage=mean, bfwi=var_all - wfwi, wfwi=wfwi,
        n_workers=int(big_n), n_firms=int(n.size), var_of_within_var_raw=raw, vov_clamped=clamped,
        n_excluded_firms=tab.n_excluded_firms, year_label=year_label)


def measure_moments(panel: Panel, min_firm_size: int = 5) -> MeasuredMoments:
    """The five targeted moments plus the wage decomposition, measured on ``panel``.

    Firms below ``max(min_firm_size, 2)`` workers are dropped first.  Within
    statistics are weighted by employment (``n_j / N``); the variance of
    within-firm variances is de-noised by subtracting the weighted mean of the
    firm-level sampling-variance estimates and clamped at zero.

    Raises:
        PanelError: if the panel is empty or no firm survives the size filter.
    """
    tab = firm_table(panel, min_firm_size)
    return _moments_from_table(tab, panel.log_wage[tab.keep], panel.year_label)


def resample(panel: Panel, seed: int) -> Panel:
    """Draw ``N`` workers with replacement and keep each drawn worker once.

    Worker-firm matching is unchanged; firm sizes are recomputed and firms
    left without workers disappear.
    """
    n = panel.n_workers
    if n == 0:
        raise PanelError("panel has no workers")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & ((1 << 64) - 1)))
    keep = np.zeros(n, dtype=bool)
    keep[rng.integers(0, n, size=n)] = True
    return panel.subset(keep)


def expected_survivor_fraction(n: int) -> float:
    """``1 - (1 - 1/n)^n``, the expected share of distinct workers after resampling."""
    return float(-np.expm1(n * np.log1p(-1.0 / n)))


# ---------------------------------------------------------------------------
# firm-cluster jackknife


def cluster_jackknife(totals: np.ndarray, func: Callable[[np.ndarray], np.ndarray]):
    """Delete-one-cluster jackknife for smooth functions of cluster totals.

    Args:
        totals: ``(J, k)`` array; row ``j`` holds cluster ``j``'s contribution
            to each of ``k`` additive totals.
        func: maps an ``(..., k)`` array of totals to ``(..., m)`` statistics.

    Returns:
        ``(estimate, se)``, each of shape ``(m,)``.
    """
    totals = np.asarray(totals, dtype=float)
    j = totals.shape[0]
    full = totals.sum(axis=0)
    estimate = np.asarray(func(full), dtype=float)
    loo = np.asarray(func(full[None, :] - totals), dtype=float)
    centred = loo - loo.mean(axis=0)
    se = np.sqrt((j - 1.0) / j * np.sum(centred * centred, axis=0))
    return estimate, se


MEASURED_FIELDS = ("wfwi_weighted", "var_of_within_var", "wfwi_unweighted", "var_log_wage", "mean_log_wage",
                   "bfwi")


def _stats_from_totals(t):
    n, s1, s2, nv, v, nv2, na, cnt = (t[..., i] for i in range(8))
    mean = s1 / n
    var_all = (s2 - n * mean * mean) / (n - 1.0)
    wfwi = nv / n
    vov = nv2 / n - wfwi * wfwi - na / n
    return np.stack([wfwi, vov, v / cnt, var_all, mean, var_all - wfwi], axis=-1)


def measured_standard_errors(panel: Panel, min_firm_size: int = 5) -> dict:
    """Firm-cluster jackknife standard errors of the measured moments.

    The de-noised variance of variances is reported before clamping.
    """
    tab = firm_table(panel, min_firm_size)
    lw = panel.log_wage[tab.keep]
    shift = float(np.mean(lw))
    d = lw - shift
    n = tab.size.astype(float)
    totals = np.column_stack([
        n, np.bincount(tab.codes, weights=d), np.bincount(tab.codes, weights=d * d),
        n * tab.var_lw, tab.var_lw, n * tab.var_lw**2, n * tab.vov_adjustment, np.ones_like(n),
    ])
    est, se = cluster_jackknife(totals, _stats_from_totals)
    est[4] += shift
    return {name: (float(e), float(s)) for name, e, s in zip(MEASURED_FIELDS, est, se)}
