"""Closed-form population moments of a solved equilibrium.

Every quantity here is a function of ``(sigma, sigma_x, sigma_theta, c_a)``
and the wage constant.  Both components of each
variance decomposition are evaluated directly and the total is formed as
their sum, so the law-of-total-variance identities hold exactly in floating
point.  Subtracting a component from the total instead would cancel badly
once ``rho^4`` approaches one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Union

import numpy as np

from .model import Equilibrium, ModelParams, solve_equilibrium


@dataclass(frozen=True)
class WelfareReport:
    var_u: float
    bfui: float
    wfui: float
    bfui_share: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class WageReport:
    var_w: float
    bfwi: float
    wfwi: float
    bfwi_share: float
    mean_log_wage: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MomentSet:
    """The five wage moments used for identification."""

    wfwi_weighted: float
    var_of_within_var: float
    wfwi_unweighted: float
    var_log_wage: float
    mean_log_wage: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: float(data[k]) for k in cls.__dataclass_fields__})

    def implied_sigma_sq(self) -> float:
        """``sigma^2`` implied by the weighted within moment and its dispersion."""
        a = math.sqrt(2.0) * self.wfwi_weighted
        b = math.sqrt(self.var_of_within_var)
        return (a - 0.5 * b) / (a - b)


@dataclass(frozen=True)
class AkmReport:
    """Two-way fixed-effects variance decomposition implied by the model.

    The worker effect equals log utility and the firm effect equals the log
    amenity, so these follow from the same closed forms.
    """

    var_wfe: float
    var_ffe: float
    two_cov: float
    var_avg_wfe: float
    corr_wfe_ffe: float

    def to_dict(self):
        return asdict(self)


def compensating_ratio(eq: Equilibrium, params: ModelParams) -> float:
    """``q = 1 / (c_a (1 - sigma_x / sigma))``, the amenity loading of firm wages."""
    return 1.0 / (params.c_a * (1.0 - params.sigma_x / eq.sigma))


def welfare_report(eq: Equilibrium, params: ModelParams) -> WelfareReport:
    sx, s = params.sigma_x, eq.sigma
    bfui = 0.5 * sx * sx * s * s * eq.rho_sq**2
    wfui = 0.5 * sx * sx * (2.0 - 1.0 / (s * s))
    var_u = bfui + wfui
    return WelfareReport(var_u=var_u, bfui=bfui, wfui=wfui, bfui_share=bfui / var_u)


def mean_log_wage(eq: Equilibrium, params: ModelParams) -> float:
    sx, s, c_a = params.sigma_x, eq.sigma, params.c_a
    return 0.5 * sx * s + 0.5 * sx * (s * s - 1.0) / (c_a * (s - sx)) + eq.b_const


def wage_report(eq: Equilibrium, params: ModelParams) -> WageReport:
    welfare = welfare_report(eq, params)
    q = compensating_ratio(eq, params)
    bfwi = welfare.bfui * (1.0 + q) ** 2
    wfwi = welfare.wfui
    var_w = bfwi + wfwi
    return WageReport(var_w=var_w, bfwi=bfwi, wfwi=wfwi, bfwi_share=bfwi / var_w,
                      mean_log_wage=mean_log_wage(eq, params))


def conditional_moments(theta, eq: Equilibrium, params: ModelParams):
    """Moments of workers inside firm ``theta``.

    Returns:
        ``(E[X^2 | theta], Var[ln W | theta], E[ln W | theta])``.
    """
    theta = np.asarray(theta, dtype=float)
    r = params.sigma_x / eq.sigma
    t2 = theta * theta
    e_x2 = r * r * (1.0 + t2)
    var_lnw = 0.5 * r * r * (1.0 + 2.0 * t2)
    e_lnw = 0.5 * r * t2 * (1.0 + compensating_ratio(eq, params)) + eq.b_const + 0.5 * r
    if theta.ndim == 0:
        return float(e_x2), float(var_lnw), float(e_lnw)
    return e_x2, var_lnw, e_lnw


def targeted_moments(eq: Equilibrium, params: ModelParams) -> MomentSet:
    wages = wage_report(eq, params)
    sx, s = params.sigma_x, eq.sigma
    vov = (math.sqrt(2.0) * sx * sx * eq.rho_sq) ** 2
    r = sx / s
    unweighted = 0.5 * r * r * (1.0 + 2.0 * params.sigma_theta**2)
    return MomentSet(
        wfwi_weighted=wages.wfwi,
        var_of_within_var=vov,
        wfwi_unweighted=unweighted,
        var_log_wage=wages.var_w,
        mean_log_wage=wages.mean_log_wage,
    )


def akm_report(eq: Equilibrium, params: ModelParams) -> AkmReport:
    welfare = welfare_report(eq, params)
    q = compensating_ratio(eq, params)
    scale = params.sigma_x * eq.sigma * eq.rho_sq
    var_ffe = 0.5 * (scale * q) ** 2
    two_cov = scale * scale * q
    denom = 2.0 * math.sqrt(welfare.var_u * var_ffe)
    corr = two_cov / denom if denom > 0.0 else eq.rho_sq
    return AkmReport(var_wfe=welfare.var_u, var_ffe=var_ffe, two_cov=two_cov,
                     var_avg_wfe=welfare.bfui, corr_wfe_ffe=corr)


# ---------------------------------------------------------------------------
# outcome selectors and finite differences

OUTCOMES: dict[str, Callable[[Equilibrium, ModelParams], float]] = {
    "sigma": lambda eq, p: eq.sigma,
    "rho_sq": lambda eq, p: eq.rho_sq,
    "ln_u0": lambda eq, p: eq.ln_u0,
    "var_u": lambda eq, p: welfare_report(eq, p).var_u,
    "bfui": lambda eq, p: welfare_report(eq, p).bfui,
    "wfui": lambda eq, p: welfare_report(eq, p).wfui,
    "bfui_share": lambda eq, p: welfare_report(eq, p).bfui_share,
    "var_w": lambda eq, p: wage_report(eq, p).var_w,
    "bfwi": lambda eq, p: wage_report(eq, p).bfwi,
    "wfwi": lambda eq, p: wage_report(eq, p).wfwi,
    "bfwi_share": lambda eq, p: wage_report(eq, p).bfwi_share,
    "mean_log_wage": lambda eq, p: mean_log_wage(eq, p),
    "two_cov": lambda eq, p: akm_report(eq, p).two_cov,
    "var_ffe": lambda eq, p: akm_report(eq, p).var_ffe,
}

Outcome = Union[str, Callable[[Equilibrium, ModelParams], float]]


def evaluate_outcome(params: ModelParams, target: Outcome) -> float:
    func = OUTCOMES[target] if isinstance(target, str) else target
    return func(solve_equilibrium(params), params)


def finite_diff_sensitivity(params: ModelParams, target: Outcome, param: str, step: float | None = None,
                            *, rel_step: float = 1e-5) -> float:
    """Central-difference derivative of an outcome with respect to one primitive.

    Args:
        params: base point.
        target: an :data:`OUTCOMES` key or a callable ``(eq, params) -> float``.
        param: name of the primitive to perturb.
        step: absolute step; defaults to ``rel_step * max(|value|, 1e-3)``.
    """
    base = getattr(params, param)
    h = rel_step * max(abs(base), 1e-3) if step is None else step
    if not h > 0.0:
        raise ValueError("step must be positive")
    up = evaluate_outcome(params.replace(**{param: base + h}), target)
    down = evaluate_outcome(params.replace(**{param: base - h}), target)
    return (up - down) / (2.0 * h)
