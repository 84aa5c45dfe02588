"""Synthetic matched employer-employee panels drawn from a solved equilibrium.

Panels are stored column-wise (one numpy array per field).  Row views
(:class:`FirmRecord`, :class:`WorkerRecord`) are available for small panels
and tests, but every computation works on the arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from .errors import DomainError, PanelError
from .model import Equilibrium, ModelParams, log_firm_size, log_wage

MASK64 = (1 << 64) - 1
WORKER_COLUMNS = ("worker_id", "firm_id", "log_wage")
LATENT_COLUMNS = ("x", "h", "theta")
FIRM_COLUMNS = ("firm_id", "theta", "size")


@dataclass(frozen=True)
class FirmRecord:
    firm_id: int
    theta: float
    size: int


@dataclass(frozen=True)
class WorkerRecord:
    worker_id: int
    firm_id: int
    x: float
    h: float
    log_wage: float


@dataclass
class Panel:
    """Column-oriented matched employer-employee cross-section.

    Worker columns ``x``, ``h`` and ``theta`` are latent and optional; the
    measurement code never reads them.  ``firm_theta`` is likewise optional.
    ``firm_size`` always equals the number of workers per firm.
    """

    worker_id: np.ndarray
    firm_id: np.ndarray
    log_wage: np.ndarray
    firm_ids: np.ndarray
    firm_size: np.ndarray
    firm_theta: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    year_label: int = 0
    params_used: Optional[ModelParams] = None
    _codes: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_workers(cls, worker_id, firm_id, log_wage, *, x=None, h=None, theta=None, firm_theta=None,
                     firm_ids=None, year_label=0, params_used=None) -> "Panel":
        """Build a panel from worker columns, deriving firm sizes by counting.

        ``firm_theta`` may be aligned either with ``firm_ids`` (if given) or
        with the sorted unique firm ids.
        """
        worker_id = np.asarray(worker_id, dtype=np.int64)
        firm_id = np.asarray(firm_id, dtype=np.int64)
        log_wage = np.asarray(log_wage, dtype=float)
        uniq, codes, counts = np.unique(firm_id, return_inverse=True, return_counts=True)
        ftheta = None
        if firm_theta is not None:
            firm_theta = np.asarray(firm_theta, dtype=float)
            if firm_ids is not None:
                firm_ids = np.asarray(firm_ids, dtype=np.int64)
                order = np.argsort(firm_ids)
                pos = np.minimum(np.searchsorted(firm_ids[order], uniq), firm_ids.size - 1)
                if np.any(firm_ids[order][pos] != uniq):
                    raise PanelError("worker refers to a firm_id absent from the firm table")
                ftheta = firm_theta[order][pos]
            else:
                ftheta = firm_theta
        panel = cls(worker_id=worker_id, firm_id=firm_id, log_wage=log_wage, firm_ids=uniq,
                    firm_size=counts.astype(np.int64), firm_theta=ftheta,
                    x=None if x is None else np.asarray(x, dtype=float),
                    h=None if h is None else np.asarray(h, dtype=float),
                    theta=None if theta is None else np.asarray(theta, dtype=float),
                    year_label=int(year_label), params_used=params_used)
        panel._codes = codes.astype(np.int64)
        return panel

    @property
    def n_workers(self) -> int:
        return int(self.worker_id.size)

    @property
    def n_firms(self) -> int:
        return int(self.firm_ids.size)

    def firm_codes(self) -> np.ndarray:
        """Index of each worker's firm into ``firm_ids``."""
        if self._codes is None:
            pos = np.searchsorted(self.firm_ids, self.firm_id)
            self._codes = pos.astype(np.int64)
        return self._codes

    def subset(self, keep: np.ndarray) -> "Panel":
        """Panel restricted to the workers selected by boolean mask ``keep``."""
        cols = {k: (None if getattr(self, k) is None else getattr(self, k)[keep]) for k in ("x", "h", "theta")}
        codes = self.firm_codes()[keep]
        counts = np.bincount(codes, minlength=self.n_firms)
        alive = counts > 0
        remap = np.cumsum(alive) - 1
        out = Panel(worker_id=self.worker_id[keep], firm_id=self.firm_id[keep], log_wage=self.log_wage[keep],
                    firm_ids=self.firm_ids[alive], firm_size=counts[alive].astype(np.int64),
                    firm_theta=None if self.firm_theta is None else self.firm_theta[alive],
                    year_label=self.year_label, params_used=self.params_used, **cols)
        out._codes = remap[codes]
        return out

    def validate(self) -> None:
        """Check the panel invariants; raise :class:`PanelError` on violation."""
        if self.n_workers == 0:
            raise PanelError("panel has no workers")
        n = self.n_workers
        for name in ("firm_id", "log_wage", "x", "h", "theta"):
            col = getattr(self, name)
            if col is not None and col.shape != (n,):
                raise PanelError(f"column {name} has length {col.shape[0]}, expected {n}")
        if np.unique(self.worker_id).size != n:
            raise PanelError("duplicate worker_id")
        if np.any(np.diff(self.firm_ids) <= 0):
            raise PanelError("firm ids must be unique and sorted")
        pos = np.searchsorted(self.firm_ids, self.firm_id)
        pos = np.minimum(pos, self.n_firms - 1)
        if np.any(self.firm_ids[pos] != self.firm_id):
            raise PanelError("worker refers to an unknown firm_id")
        counts = np.bincount(pos, minlength=self.n_firms)
        if np.any(counts != self.firm_size):
            raise PanelError("firm size does not match worker count")
        if not np.all(np.isfinite(self.log_wage)):
            raise PanelError("non-finite log wage")

    def firms(self) -> list[FirmRecord]:
        theta = self.firm_theta if self.firm_theta is not None else np.full(self.n_firms, np.nan)
        return [FirmRecord(int(i), float(t), int(s)) for i, t, s in zip(self.firm_ids, theta, self.firm_size)]

    def workers(self) -> Iterator[WorkerRecord]:
        nan = np.full(self.n_workers, np.nan)
        x = self.x if self.x is not None else nan
        h = self.h if self.h is not None else nan
        for row in zip(self.worker_id, self.firm_id, x, h, self.log_wage):
            yield WorkerRecord(int(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4]))


# ---------------------------------------------------------------------------
# random streams


def _key(seed: int) -> int:
    return int(seed) & MASK64


def firm_stream(seed: int, firm_id: int) -> np.random.Generator:
    """Counter-based stream for the workers of one firm.

    The firm id sits in a high counter word, so streams never overlap and do
    not depend on the order in which firms are generated.
    """
    return np.random.Generator(np.random.Philox(key=_key(seed), counter=[0, 0, int(firm_id), 1]))


def theta_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=_key(seed), counter=[0, 0, 0, 0]))


def draw_sizeweighted_theta(eq: Equilibrium, rng: np.random.Generator, size=None):
    """Draw employment-weighted firm productivities, ``N(0, sigma^2 - 1)``."""
    return rng.normal(0.0, math.sqrt(eq.sigma**2 - 1.0), size)


# ---------------------------------------------------------------------------
# sizes


def allocate_sizes(log_weights, n_workers: int, min_firm_size: int) -> np.ndarray:
    """Integer firm sizes proportional to ``exp(log_weights)`` summing to ``n_workers``.

    Firms whose proportional share falls below ``min_firm_size`` are set to
    the floor and the rest of the workforce is shared among the others.
    Fractional parts are resolved by largest remainder (ties by index).
    """
    log_weights = np.asarray(log_weights, dtype=float)
    j = log_weights.size
    if j == 0 or n_workers < j * min_firm_size:
        raise DomainError(f"cannot place {n_workers} workers in {j} firms of at least {min_firm_size}")
    w = np.exp(log_weights - log_weights.max())
    floored = np.zeros(j, dtype=bool)
    while True:
        free = n_workers - min_firm_size * floored.sum()
        share = np.where(floored, 0.0, w)
        quota = free * share / share.sum()
        newly = ~floored & (quota < min_firm_size)
        if not newly.any():
            break
        floored |= newly
    sizes = np.where(floored, min_firm_size, np.floor(quota)).astype(np.int64)
    short = n_workers - int(sizes.sum())
    if short > 0:
        rem = np.where(floored, -1.0, quota - np.floor(quota))
        order = np.argsort(-rem, kind="stable")
        sizes[order[:short]] += 1
    return sizes


# ---------------------------------------------------------------------------
# generation


def _assemble(params, eq, theta, sizes, seed, year_label):
    j = theta.size
    firm_ids = np.arange(j, dtype=np.int64)
    n = int(sizes.sum())
    h = np.empty(n)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    for fid, start, size in zip(firm_ids, starts, sizes):
        h[start:start + size] = firm_stream(seed, fid).standard_normal(size)
    codes = np.repeat(np.arange(j), sizes)
    worker_theta = theta[codes]
    h += worker_theta
    x = h * (params.sigma_x / eq.sigma)
    panel = Panel(worker_id=np.arange(n, dtype=np.int64), firm_id=firm_ids[codes],
                  log_wage=np.asarray(log_wage(x, worker_theta, eq, params)), firm_ids=firm_ids,
                  firm_size=sizes, firm_theta=theta, x=x, h=h, theta=worker_theta,
                  year_label=year_label, params_used=params)
    panel._codes = codes
    return panel


def simulate_panel(params: ModelParams, eq: Equilibrium, n_workers: int, n_firms: int,
                   min_firm_size: int = 5, seed: int = 0, *, year_label: int = 0) -> Panel:
    """Simulate a cross-section of ``n_workers`` workers in ``n_firms`` firms.

    Firm productivities are ``N(0, sigma_theta^2)``; employment is allocated in
    proportion to ``L*(theta)``; within a firm jobs are ``N(theta, 1)``.

    Raises:
        DomainError: if ``n_workers < n_firms * min_firm_size``.
        ModelOverflowError: if a firm size overflows.
    """
    if n_firms < 1 or min_firm_size < 1:
        raise DomainError("n_firms and min_firm_size must be positive")
    theta = theta_stream(seed).normal(0.0, params.sigma_theta, n_firms)
    sizes = allocate_sizes(log_firm_size(theta, eq, params), n_workers, min_firm_size)
    return _assemble(params, eq, theta, sizes, seed, year_label)


def simulate_homogeneous_panel(params: ModelParams, eq: Equilibrium, n_firms: int, firm_size: int,
                               theta: float = 0.0, seed: int = 0, *, year_label: int = 0) -> Panel:
    """Panel in which every firm has productivity ``theta`` and ``firm_size`` workers."""
    if n_firms < 1 or firm_size < 1:
        raise DomainError("n_firms and firm_size must be positive")
    thetas = np.full(n_firms, float(theta))
    sizes = np.full(n_firms, int(firm_size), dtype=np.int64)
    return _assemble(params, eq, thetas, sizes, seed, year_label)


# ---------------------------------------------------------------------------
# CSV


def _fmt(values) -> list[str]:
    return [repr(float(v)) for v in values]


def write_panel_csv(panel: Panel, path, *, latent: bool = True, firm_path=None) -> None:
    """Write the worker table (and optionally the firm table) as CSV."""
    cols = {"worker_id": panel.worker_id, "firm_id": panel.firm_id, "log_wage": panel.log_wage}
    if latent and panel.x is not None:
        cols.update(x=panel.x, h=panel.h, theta=panel.theta)
    frame = pd.DataFrame(cols)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    if firm_path is not None:
        theta = panel.firm_theta if panel.firm_theta is not None else np.full(panel.n_firms, np.nan)
        pd.DataFrame({"firm_id": panel.firm_ids, "theta": theta, "size": panel.firm_size}).to_csv(
            firm_path, index=False, float_format="%.17g", lineterminator="\n")


def _numeric(frame: pd.DataFrame, name: str, integer: bool) -> np.ndarray:
    col = pd.to_numeric(frame[name], errors="coerce")
    bad = col.isna().to_numpy()
    if integer:
        vals = col.to_numpy(dtype=float, na_value=np.nan)
        bad |= ~np.isfinite(vals) | (vals != np.round(vals))
    else:
        bad |= ~np.isfinite(col.to_numpy(dtype=float, na_value=np.nan))
    if bad.any():
        row = int(np.argmax(bad)) + 2  # file line, header is line 1
        raise PanelError(f"invalid {name} value {frame[name].iloc[row - 2]!r}", row=row)
    if integer:
        return col.to_numpy(dtype=np.int64)
    # pandas' fast numeric parser is not correctly rounded; float() is
    return frame[name].str.strip().astype(float).to_numpy()


def _read_frame(path, required) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise PanelError(f"{path}: empty file") from None
    except pd.errors.ParserError as exc:
        raise PanelError(f"{path}: {exc}") from None
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise PanelError(f"{path}: missing column(s) {', '.join(missing)}", row=1)
    if frame.empty:
        raise PanelError(f"{path}: no data rows")
    return frame


def read_panel_csv(path, *, firm_path=None, year_label: int = 0) -> Panel:
    """Read a panel CSV.

    Raises:
        FileNotFoundError: if a file is missing.
        PanelError: on schema violations, with the offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    frame = _read_frame(path, WORKER_COLUMNS)
    cols = {name: _numeric(frame, name, True) for name in ("worker_id", "firm_id")}
    cols["log_wage"] = _numeric(frame, "log_wage", False)
    latent = {name: _numeric(frame, name, False) for name in LATENT_COLUMNS if name in frame.columns}
    firm_theta = firm_ids = None
    if firm_path is not None:
        firms = _read_frame(Path(firm_path), FIRM_COLUMNS)
        firm_ids = _numeric(firms, "firm_id", True)
        try:
            firm_theta = firms["theta"].str.strip().astype(float).to_numpy()  # may be nan when unknown
        except ValueError as exc:
            raise PanelError(f"{firm_path}: invalid theta value ({exc})") from None
    panel = Panel.from_workers(cols["worker_id"], cols["firm_id"], cols["log_wage"], firm_ids=firm_ids,
                               firm_theta=firm_theta, year_label=year_label, **latent)
    if np.unique(panel.worker_id).size != panel.n_workers:
        dup = np.flatnonzero(pd.Series(panel.worker_id).duplicated().to_numpy())[0]
        raise PanelError(f"duplicate worker_id {panel.worker_id[dup]}", row=int(dup) + 2)
    if panel.firm_theta is None and panel.theta is not None:
        panel.firm_theta = np.zeros(panel.n_firms)
        panel.firm_theta[panel.firm_codes()] = panel.theta
    return panel
