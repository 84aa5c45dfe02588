"""Ordering-average attribution of outcome changes to the four primitives.

Each of the 24 orderings of ``(sigma_theta, sigma_x, c_a, c_l)`` defines a
path from the start to the end parameter vector that switches one primitive
at a time.  A primitive's attribution is its step change averaged over all
orderings.  Intermediate vectors depend only on the set of switched
primitives, so the 24 x 4 steps touch just 16 distinct equilibria.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import SortEqError
from .model import PRIMITIVES, ModelParams, solve_equilibrium
from .moments import wage_report, welfare_report

OUTCOME_NAMES = ("var_w", "wfwi", "bfwi", "bfwi_share", "var_u", "bfui", "bfui_share")
SHARE_GUARD = 1e-12


class CounterfactualError(SortEqError):
    """An intermediate parameter vector on some ordering failed to solve."""


@dataclass(frozen=True)
class OutcomeVector:
    var_w: float
    wfwi: float
    bfwi: float
    bfwi_share: float
    var_u: float
    bfui: float
    bfui_share: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in OUTCOME_NAMES])

    def to_dict(self):
        return asdict(self)


def outcome_vector(params: ModelParams) -> OutcomeVector:
    eq = solve_equilibrium(params)
    wel, wag = welfare_report(eq, params), wage_report(eq, params)
    return OutcomeVector(var_w=wag.var_w, wfwi=wag.wfwi, bfwi=wag.bfwi, bfwi_share=wag.bfwi_share,
                         var_u=wel.var_u, bfui=wel.bfui, bfui_share=wel.bfui_share)


@dataclass(frozen=True)
class CounterfactualTable:
    """Attributed change per (primitive, outcome), totals and shares.

    ``change`` and ``share`` are ``(4, 7)`` arrays ordered as
    :data:`~sorteq.model.PRIMITIVES` x :data:`OUTCOME_NAMES`; a share is NaN
    when the total change is below the guard.
    """

    primitives: tuple
    outcomes: tuple
    change: np.ndarray
    share: np.ndarray
    total: np.ndarray
    start: OutcomeVector
    end: OutcomeVector

    def attributed(self, primitive: str, outcome: str) -> float:
        return float(self.change[self.primitives.index(primitive), self.outcomes.index(outcome)])

    def share_of(self, primitive: str, outcome: str) -> Optional[float]:
        val = self.share[self.primitives.index(primitive), self.outcomes.index(outcome)]
        return None if math.isnan(val) else float(val)

    def to_dict(self):
        def share(v):
            return None if math.isnan(v) else float(v)

        return {
            "outcomes": list(self.outcomes),
            "start": self.start.to_dict(),
            "end": self.end.to_dict(),
            "total": dict(zip(self.outcomes, map(float, self.total))),
            "change": {p: dict(zip(self.outcomes, map(float, row))) for p, row in zip(self.primitives, self.change)},
            "share_pct": {p: dict(zip(self.outcomes, map(share, row))) for p, row in zip(self.primitives, self.share)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def to_csv(self) -> str:
        """Table layout: one row per (primitive, kind), one column per outcome."""
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["primitive", "kind", *self.outcomes])
        out.writerow(["all", "total", *(repr(float(v)) for v in self.total)])
        for p, ch, sh in zip(self.primitives, self.change, self.share):
            out.writerow([p, "change", *(repr(float(v)) for v in ch)])
            out.writerow([p, "share_pct", *("undefined" if math.isnan(v) else repr(float(v)) for v in sh)])
        return buf.getvalue()


def _switched(start: ModelParams, end: ModelParams, subset: frozenset) -> ModelParams:
    return start.replace(**{k: getattr(end, k) for k in subset})


def decompose(params_start: ModelParams, params_end: ModelParams) -> CounterfactualTable:
    """Attribute ``outcome(end) - outcome(start)`` to the four primitives.

    ``ln_A`` is carried along with the end vector; it does not move any
    outcome.

    Raises:
        CounterfactualError: naming the ordering and step that failed to solve.
    """
    end = params_end
    start = params_start.replace(ln_A=end.ln_A)
    cache: dict[frozenset, np.ndarray] = {}
    # step changes are accumulated exactly so that attributions add up to the
    # total change up to the final rounding
    steps = [[Fraction(0)] * len(OUTCOME_NAMES) for _ in PRIMITIVES]
    orders = list(itertools.permutations(PRIMITIVES))
    for order in orders:
        done: frozenset = frozenset()
        for step, name in enumerate(order, 1):
            after = done | {name}
            for key in (done, after):
                if key not in cache:
                    try:
                        cache[key] = outcome_vector(_switched(start, end, key)).as_array()
                    except (SortEqError, ArithmeticError) as exc:
                        raise CounterfactualError(
                            f"ordering {' -> '.join(order)}, step {step} ({name}): {exc}") from exc
            # a primitive whose value does not change contributes exactly 0
            if getattr(start, name) != getattr(end, name):
                row = steps[PRIMITIVES.index(name)]
                for k, (hi, lo) in enumerate(zip(cache[after], cache[done])):
                    row[k] += Fraction(float(hi)) - Fraction(float(lo))
            done = after
    change = np.array([[float(v / len(orders)) for v in row] for row in steps])
    v0, v1 = cache[frozenset()], cache[frozenset(PRIMITIVES)]
    total = v1 - v0
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(np.abs(total) < SHARE_GUARD, np.nan, 100.0 * change / total)
    return CounterfactualTable(primitives=PRIMITIVES, outcomes=OUTCOME_NAMES, change=change, share=share,
                               total=total, start=OutcomeVector(*v0), end=OutcomeVector(*v1))
