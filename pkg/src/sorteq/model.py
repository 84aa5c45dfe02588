"""Primitives and equilibrium of the hierarchical-firm sorting model.

Workers with skill ``x ~ N(0, sigma_x^2)`` sort into jobs ``h = t + theta``
where ``t ~ N(0, 1)`` indexes a task inside a firm and ``theta ~ N(0,
sigma_theta^2)`` is firm productivity.  In the (unique) equilibrium with
normally distributed jobs, ``h ~ N(0, sigma^2)`` and everything else is a
closed-form function of ``sigma``.  The solver only searches that class.

All firm- and worker-level functions are vectorised over numpy arrays and
are pure functions of ``(eq, params)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, DomainError, ModelOverflowError, QuadratureError

LN4 = math.log(4.0)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

EXPONENT_CAP = 700.0
"""Largest log of a firm-level level quantity before ``ModelOverflowError``."""

PARAM_NAMES = ("sigma_x", "sigma_theta", "c_a", "c_l", "ln_A")
PRIMITIVES = ("sigma_theta", "sigma_x", "c_a", "c_l")


@dataclass(frozen=True)
class ModelParams:
    """Exogenous primitives.

    Attributes:
        sigma_x: std. dev. of worker skill.
        sigma_theta: std. dev. of firm productivity.
        c_a: convexity of the amenity cost.
        c_l: convexity of the span-of-control cost.
        ln_A: log total factor productivity.
    """

    sigma_x: float
    sigma_theta: float
    c_a: float
    c_l: float
    ln_A: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not isinstance(value, (int, float, np.floating, np.integer)):
                raise DomainError(f"{name} must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(value))
        for name in ("sigma_x", "sigma_theta", "c_a", "c_l"):
            if getattr(self, name) <= 0.0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def alpha(self) -> float:
        """Size elasticity composite ``(1 + c_a) / (c_l c_a)``."""
        return (1.0 + self.c_a) / (self.c_l * self.c_a)

    def replace(self, **changes) -> "ModelParams":
        return ModelParams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        unknown = set(data) - set(PARAM_NAMES)
        if unknown:
            raise DomainError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Equilibrium:
    """Solved endogenous state.

    Attributes:
        sigma: std. dev. of the equilibrium job distribution (supply of
            quality jobs).
        alpha: ``(1 + c_a) / (c_l c_a)``.
        rho_sq: sorting strength, ``1 - 1/sigma^2``.
        ln_u0: log utility of the skill-0 worker.
        l_star_0: size of the ``theta = 0`` firm.
        b_const: constant term of the log-wage equation.
    """

    sigma: float
    alpha: float
    rho_sq: float
    ln_u0: float
    l_star_0: float
    b_const: float

    def to_dict(self) -> dict:
        return asdict(self)


def inverse_alpha(sigma, sigma_x, sigma_theta):
    """Map a job dispersion ``sigma`` to the ``alpha`` that supports it.

    This is the equilibrium condition solved for ``alpha``; it is strictly
    increasing in ``sigma`` once ``sigma > max(sigma_x, sqrt(1 +
    sigma_theta^2))``.

    Raises:
        DomainError: if ``sigma <= 1`` or ``sigma <= sigma_x``.
    """
    s = np.asarray(sigma, dtype=float)
    if np.any(s <= 1.0) or np.any(s <= sigma_x):
        raise DomainError(f"inverse_alpha needs sigma > max(1, sigma_x); got sigma={sigma}, sigma_x={sigma_x}")
    out = (s / sigma_x - 1.0) * (1.0 / sigma_theta**2 - 1.0 / (s * s - 1.0))
    return float(out) if out.ndim == 0 else out


def _inverse_alpha_and_slope(s, sigma_x, sigma_theta):
    st2 = sigma_theta * sigma_theta
    v = (s - 1.0) * (s + 1.0)
    ratio = s / sigma_x - 1.0
    bracket = (v - st2) / (st2 * v)
    slope = bracket / sigma_x + ratio * 2.0 * s / (v * v)
    return ratio * bracket, slope


def _exact_residual(s: float, sigma_x: float, sigma_theta: float, alpha: float) -> Fraction:
    s, sx, st = Fraction(s), Fraction(sigma_x), Fraction(sigma_theta)
    return (s / sx - 1) * (1 / (st * st) - 1 / (s * s - 1)) - Fraction(alpha)


def solve_sigma(alpha: float, sigma_x: float, sigma_theta: float, *, max_expansions: int = 200,
                max_iter: int = 200) -> float:
    """Invert :func:`inverse_alpha` for ``sigma`` given ``alpha > 0``.

    Bracketed bisection with safeguarded Newton steps.  The bracket starts at
    ``[lo, 2 lo]`` with ``lo = max(sigma_x, sqrt(1 + sigma_theta^2)) + 1e-9``
    and the upper end doubles until the residual changes sign.  The last few
    candidate doubles are ranked by their exact rational residual, so the
    result is the float closest to the true root.  Where the map is steep,
    one ulp of ``sigma`` can move ``alpha`` by more than 1e-12 relative; the
    returned value is then still the best representable root.
    """
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise DomainError(f"alpha must be positive and finite, got {alpha}")
    floor = max(sigma_x, math.sqrt(1.0 + sigma_theta**2))
    lo = floor + 1e-9
    if _inverse_alpha_and_slope(lo, sigma_x, sigma_theta)[0] >= alpha:
        lo, hi = floor, lo
    else:
        hi = 2.0 * lo
        for _ in range(max_expansions):
            if _inverse_alpha_and_slope(hi, sigma_x, sigma_theta)[0] >= alpha:
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise ConvergenceError(f"no bracket for alpha={alpha} after {max_expansions} doublings")

    s = 0.5 * (lo + hi)
    for _ in range(max_iter):
        value, slope = _inverse_alpha_and_slope(s, sigma_x, sigma_theta)
        if value == alpha:
            break
        if value > alpha:
            hi = s
        else:
            lo = s
        step = s - (value - alpha) / slope if slope > 0.0 else 0.5 * (lo + hi)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if step in (lo, hi, s):
            break
        s = step
    else:
        raise ConvergenceError(f"sigma solve did not converge in {max_iter} iterations")

    candidates = [s]
    for direction in (math.inf, -math.inf):
        c = s
        for _ in range(3):
            c = math.nextafter(c, direction)
            candidates.append(c)
    candidates = [c for c in candidates if c > floor]
    s = min(candidates, key=lambda c: abs(_exact_residual(c, sigma_x, sigma_theta, alpha)))
    if abs(_exact_residual(s, sigma_x, sigma_theta, alpha)) > 1e-6 * alpha:
        raise ConvergenceError(f"sigma solve failed for alpha={alpha}")
    return s


def _log_u0(sigma: float, alpha: float, params: ModelParams) -> float:
    return (
        2.0 * params.ln_A
        - 0.5 * math.log(1.0 - params.sigma_x / sigma)
        - LN4
        - (math.log(params.sigma_theta) - 0.5 * math.log(sigma * sigma - 1.0)) / alpha
        - params.c_a / (1.0 + params.c_a) * math.log1p(params.c_l)
    )


def _wage_constant(sigma: float, ln_u0: float, params: ModelParams) -> float:
    c_a, c_l = params.c_a, params.c_l
    return (
        ln_u0
        + math.log1p(1.0 / c_a)
        + c_l / (1.0 + c_a) * (math.log(params.sigma_theta) - 0.5 * math.log(sigma * sigma - 1.0)
                               + math.log1p(c_l) / c_l)
    )


def equilibrium_from_sigma(sigma: float, params: ModelParams) -> Equilibrium:
    """Build the equilibrium object for a known ``sigma`` (no solving)."""
    alpha = params.alpha
    ln_u0 = _log_u0(sigma, alpha, params)
    kappa = alpha / (sigma / params.sigma_x - 1.0)
    mass = 1.0 - kappa * params.sigma_theta**2
    if mass <= 0.0:
        raise DomainError(f"sigma={sigma} implies a non-normalisable size distribution")
    return Equilibrium(
        sigma=sigma,
        alpha=alpha,
        rho_sq=1.0 - 1.0 / sigma**2,
        ln_u0=ln_u0,
        l_star_0=math.sqrt(mass),
        b_const=_wage_constant(sigma, ln_u0, params),
    )


def solve_equilibrium(params: ModelParams, *, max_expansions: int = 200) -> Equilibrium:
    """Solve for the normal-jobs equilibrium of ``params``."""
    sigma = solve_sigma(params.alpha, params.sigma_x, params.sigma_theta, max_expansions=max_expansions)
    return equilibrium_from_sigma(sigma, params)


def eqmsigma_residual(eq: Equilibrium, params: ModelParams) -> float:
    """Absolute residual of ``sigma^2 = sigma_theta^2 / (1 - kappa sigma_theta^2) + 1``.

    Evaluated in exact rational arithmetic on the stored doubles: the
    right-hand side cancels badly when ``sigma`` is large, and float
    evaluation would mostly measure its own rounding.
    """
    s, sx, st, a = (Fraction(v) for v in (eq.sigma, params.sigma_x, params.sigma_theta, params.alpha))
    rhs = st * st / (1 - a * st * st / (s / sx - 1)) + 1
    return abs(float(s * s - rhs))


# ---------------------------------------------------------------------------
# worker- and firm-level equilibrium functions


def _ratio(eq: Equilibrium, params: ModelParams) -> float:
    return eq.sigma / params.sigma_x


def size_curvature(eq: Equilibrium, params: ModelParams) -> float:
    """``kappa`` in ``ln L*(theta) = ln L*(0) + kappa theta^2 / 2``."""
    return eq.alpha / (_ratio(eq, params) - 1.0)


def _scalar_or_array(out):
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def assignment_mu(h, eq: Equilibrium, params: ModelParams):
    """Skill of the worker who performs job ``h``."""
    return _scalar_or_array(np.asarray(h, dtype=float) * (params.sigma_x / eq.sigma))


def log_utility(x, eq: Equilibrium, params: ModelParams):
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(0.5 * _ratio(eq, params) * x * x + eq.ln_u0)


def log_firm_size(theta, eq: Equilibrium, params: ModelParams, *, cap: float = EXPONENT_CAP):
    theta = np.asarray(theta, dtype=float)
    out = math.log(eq.l_star_0) + 0.5 * size_curvature(eq, params) * theta * theta
    if np.any(out > cap):
        raise ModelOverflowError(f"ln L*(theta) = {np.max(out):.1f} exceeds cap {cap}")
    return _scalar_or_array(out)


def firm_size(theta, eq: Equilibrium, params: ModelParams, *, cap: float = EXPONENT_CAP):
    """Employment ``L*(theta)`` of a firm with productivity ``theta``."""
    return _scalar_or_array(np.exp(log_firm_size(theta, eq, params, cap=cap)))


def _log_revenue_index(theta, eq: Equilibrium, params: ModelParams):
    # ln of A^2 E[exp(sigma_x h^2 / 2 sigma) | theta] / (4 u(0))
    theta = np.asarray(theta, dtype=float)
    return (2.0 * params.ln_A - LN4 - eq.ln_u0 - 0.5 * math.log(1.0 - params.sigma_x / eq.sigma)
            + theta * theta / (2.0 * (_ratio(eq, params) - 1.0)))


def log_amenity(theta, eq: Equilibrium, params: ModelParams):
    """Log amenity level ``ln a*(theta)``."""
    c_a = params.c_a
    return _scalar_or_array(math.log1p(1.0 / c_a) + _log_revenue_index(theta, eq, params) / c_a)


def log_effort(x, theta, eq: Equilibrium, params: ModelParams, *, log_a=None):
    """Log effort required from skill ``x`` at firm ``theta`` (effort FOC).

    ``log_a`` overrides the firm's equilibrium amenity ``ln a*(theta)``.
    """
    x = np.asarray(x, dtype=float)
    if log_a is None:
        log_a = log_amenity(theta, eq, params)
    return _scalar_or_array(
        2.0 * params.ln_A + _ratio(eq, params) * x * x + 2.0 * np.asarray(log_a)
        - 2.0 * np.asarray(log_utility(x, eq, params)) - LN4
    )


def log_wage(x, theta, eq: Equilibrium, params: ModelParams):
    """Equilibrium log wage of skill ``x`` employed by firm ``theta``."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    s = _ratio(eq, params)
    return _scalar_or_array(0.5 * s * x * x + theta * theta / (2.0 * params.c_a * (s - 1.0)) + eq.b_const)


def firm_profit(theta, eq: Equilibrium, params: ModelParams, *, cap: float = EXPONENT_CAP):
    """Maximised profit ``r(theta) = c_l L*(theta)^(1 + c_l)``."""
    log_r = math.log(params.c_l) + (1.0 + params.c_l) * np.asarray(log_firm_size(theta, eq, params, cap=cap))
    if np.any(log_r > cap):
        raise ModelOverflowError(f"ln r(theta) = {np.max(log_r):.1f} exceeds cap {cap}")
    return _scalar_or_array(np.exp(log_r))


def firm_objective(size, amenity, theta, eq: Equilibrium, params: ModelParams):
    """Profit of firm ``theta`` at an arbitrary (size, amenity) choice."""
    c_a = params.c_a
    revenue = amenity * np.exp(_log_revenue_index(theta, eq, params))
    amenity_cost = (c_a * amenity / (1.0 + c_a)) ** (1.0 + c_a) / c_a
    return size * (revenue - amenity_cost - size**params.c_l)


def sizeweighted_theta_variance(eq: Equilibrium) -> float:
    """Variance of employment-weighted productivity, ``sigma^2 - 1``."""
    return eq.sigma**2 - 1.0


# ---------------------------------------------------------------------------
# job density by direct quadrature of the firm mixture


def job_density(h, eq: Equilibrium, params: ModelParams, *, epsabs: float = 1e-10, epsrel: float = 1e-10):
    """Equilibrium job density obtained by integrating the firm mixture.

    Integrates ``L*(theta) phi(h - theta) phi(theta / sigma_theta) / sigma_theta``
    over ``theta`` with adaptive Gauss-Kronrod quadrature.  In equilibrium this
    is the ``N(0, sigma^2)`` density.  Each point is integrated in the shifted
    variable ``z = (theta - m(h)) / s``, where ``m(h)`` and ``s`` are the mode
    and width of the integrand, so that all points share one window.

    Raises:
        QuadratureError: if the reported error exceeds the tolerance.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    st = params.sigma_theta
    kappa = size_curvature(eq, params)
    ln_l0 = math.log(eq.l_star_0)
    precision = 1.0 + 1.0 / st**2 - kappa
    sd = 1.0 / math.sqrt(precision)
    centres = h / precision

    def integrand(z):
        theta = centres + sd * z
        log_f = (ln_l0 + 0.5 * kappa * theta * theta - math.log(st)
                 - 0.5 * (h - theta) ** 2 - 0.5 * (theta / st) ** 2 - 2.0 * LOG_SQRT_2PI)
        return sd * np.exp(log_f)

    value, err = integrate.quad_vec(integrand, -12.0, 12.0, epsabs=epsabs, epsrel=epsrel, quadrature="gk21")
    if err > max(epsabs, epsrel * float(np.max(value))) * 100.0:
        raise QuadratureError(f"job density quadrature error {err:.2e}")
    return _scalar_or_array(value if value.size > 1 else value[0])


def normal_job_density(h, eq: Equilibrium):
    """The ``N(0, sigma^2)`` density that :func:`job_density` must reproduce."""
    h = np.asarray(h, dtype=float)
    z = h / eq.sigma
    return _scalar_or_array(np.exp(-0.5 * z * z - LOG_SQRT_2PI) / eq.sigma)


def firm_expectation(func, eq: Equilibrium, params: ModelParams, *, weighted: bool = True,
                     epsabs: float = 1e-14, epsrel: float = 1e-12) -> float:
    """Integrate ``func(theta)`` over firms, optionally employment-weighted.

    ``weighted=True`` integrates against ``L*(theta) dPhi(theta / sigma_theta)``
    (which sums to total employment); otherwise against the firm distribution.
    """
    st = params.sigma_theta
    kappa = size_curvature(eq, params) if weighted else 0.0
    ln_l0 = math.log(eq.l_star_0) if weighted else 0.0
    sd = 1.0 / math.sqrt(1.0 / st**2 - kappa)
    half_width = 12.0 * sd

    def integrand(theta):
        log_w = ln_l0 + 0.5 * kappa * theta * theta - 0.5 * (theta / st) ** 2 - LOG_SQRT_2PI - math.log(st)
        return func(theta) * math.exp(log_w)

    value, err = integrate.quad(integrand, -half_width, half_width, epsabs=epsabs, epsrel=epsrel, limit=200)
    if not math.isfinite(value):
        raise QuadratureError("non-finite firm expectation")
    return value
