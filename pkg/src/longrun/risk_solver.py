"""Risk-sensitive solvers: multiplicative Bellman and Poisson equations in log
space, a Perron-root oracle for fixed policies, the a-priori span bound, and
the gamma sweep connecting the risk-sensitive gain to the average reward.

The multiplicative equations are always iterated on their logarithmic
transform with shifted exponentials, so reward scales that would overflow
exp() directly remain solvable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    GammaNotAllowed,
    InvalidModel,
    KernelsNotEquivalent,
    MarginNotSatisfied,
    NoConvergence,
    NotErgodic,
)
from .model import (
    DiscountSchedule,
    Model,
    StationaryPolicy,
    equivalence_constant,
    ergodicity_coefficient,
    risk_contraction_margin,
    span_seminorm,
)
from .average_solver import SpanSolution, poisson_solve

GAMMA_FLOOR = 1e-8

CERT_EQUIVALENCE = "equivalence"
CERT_MARGIN = "margin"
CERT_NONE = "uncertified"


@dataclass(frozen=True)
class RiskSolution:
    """Solution of a multiplicative optimality or Poisson equation.

    certificate records which a-priori sup-norm bound on w applies
    ("equivalence": span(gamma c) + ln(row ratio), "margin": the
    contraction-margin bound, or "uncertified" when neither sufficient
    condition holds); bound is its numeric value (inf when uncertified).
    """

    gamma: float
    w: np.ndarray
    lam: float
    residual: float
    iterations: int
    policy: StationaryPolicy
    certificate: str
    bound: float


@dataclass(frozen=True)
class RiskTimeExtendedSolution:
    """Backward-recursion risk solution over a truncated window.

    Slices are normalized to min 0; the subtracted constants define
    lambda_seq.  slice_residuals[j] is the span of w_grid[j] - w_grid[j+1],
    a settling diagnostic (no computable a-priori contraction factor exists
    for the log-transformed operator, so truncation quality is reported
    a posteriori).
    """

    start: int
    gamma: float
    w_grid: np.ndarray
    lambda_seq: np.ndarray
    policy_seq: np.ndarray
    slice_residuals: np.ndarray
    converged: bool
    certificate: str
    bound: float


def risk_span_bound(model: Model, gamma: float) -> float:
    """A-priori sup bound span(gamma c) - ln(1 - margin) on the relative value.

    Only available when the risk contraction margin is below 1; raises
    MarginNotSatisfied otherwise.
    """
    margin = risk_contraction_margin(model, gamma)
    if margin >= 1.0:
        raise MarginNotSatisfied(f"contraction margin {margin} >= 1; no a-priori span bound")
    return abs(gamma) * model.reward_span() - math.log(1.0 - margin)


def certificate_for(model: Model, gamma: float):
    """Pick the tightest available a-priori bound on the relative value.

    Tries the row-equivalence bound and the contraction-margin bound and
    returns (name, value).  When neither holds the solve may still proceed
    on a finite model, flagged ("uncertified", inf).
    """
    candidates = []
    try:
        k_const = equivalence_constant(model)
        candidates.append((CERT_EQUIVALENCE, abs(gamma) * model.reward_span() + math.log(k_const)))
    except KernelsNotEquivalent:
        pass
    try:
        candidates.append((CERT_MARGIN, risk_span_bound(model, gamma)))
    except MarginNotSatisfied:
        pass
    if not candidates:
        return CERT_NONE, math.inf
    return min(candidates, key=lambda c: c[1])


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if abs(gamma) < GAMMA_FLOOR:
        raise GammaNotAllowed(
            f"|gamma| < {GAMMA_FLOOR}: the 1/gamma gain extraction is unstable; use poisson_solve"
        )
    return gamma


def _risk_values(model: Model, gamma: float, w: np.ndarray, phi: float = 1.0):
    """One sweep of the log-transformed multiplicative operator.

    Computes extr_a [gamma*phi*c(., a) + ln sum_y exp(w(y)) P^a(., y)] with a
    shifted exponential; extr is max for gamma > 0 and min for gamma < 0,
    ties resolved toward the lowest action index.
    """
    shift = w.max()
    with np.errstate(divide="ignore"):
        q = gamma * phi * model.reward.T + shift + np.log(model.kernel @ np.exp(w - shift))
    if not np.isfinite(q).all():
        # an iterate escaped the representable range: no bounded solution is
        # reachable from here (possible only without a span certificate)
        raise NoConvergence("relative values left the representable log range")
    if gamma > 0:
        return q.max(axis=0), q.argmax(axis=0)
    return q.min(axis=0), q.argmin(axis=0)


def risk_relative_value_iteration(
    model: Model,
    gamma: float,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
    anchor: int = 0,
) -> RiskSolution:
    """Solve the risk-sensitive optimality equation by log-space span iteration.

    The iteration stops once the span of (operator(w) - w) is at most tol;
    the gain is the anchor value of that residual divided by gamma.  The
    extremum is a sup for gamma > 0 and an inf for gamma < 0; both signs run
    through the same code path.
    """
    gamma = _check_gamma(gamma)
    if tol <= 0:
        raise InvalidModel("tolerance must be positive")
    if ergodicity_coefficient(model) >= 1.0:
        raise NotErgodic("ergodicity coefficient >= 1")
    if not 0 <= anchor < model.n_states:
        raise InvalidModel("anchor state out of range")
    cert, bound = certificate_for(model, gamma)
    w = np.zeros(model.n_states)
    for it in range(1, max_iter + 1):
        vals, acts = _risk_values(model, gamma, w)
        resid = vals - w
        if span_seminorm(resid) <= tol:
            return RiskSolution(
                gamma=gamma,
                w=w,
                lam=float(resid[anchor]) / gamma,
                residual=span_seminorm(resid),
                iterations=it,
                policy=StationaryPolicy(acts),
                certificate=cert,
                bound=bound,
            )
        w = vals - vals.min()
    raise NoConvergence(f"no convergence after {max_iter} iterations (residual span {span_seminorm(resid):.3e})")


def multiplicative_poisson_solve(
    model: Model,
    policy: StationaryPolicy,
    gamma: float,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> RiskSolution:
    """Solve the multiplicative Poisson equation for a fixed stationary policy."""
    sub = model.under_policy(policy)
    sol = risk_relative_value_iteration(sub, gamma, tol=tol, max_iter=max_iter)
    return RiskSolution(
        gamma=sol.gamma,
        w=sol.w,
        lam=sol.lam,
        residual=sol.residual,
        iterations=sol.iterations,
        policy=policy,
        certificate=sol.certificate,
        bound=sol.bound,
    )


def perron_oracle(
    model: Model,
    policy: StationaryPolicy,
    gamma: float,
    tol: float = 1e-13,
    max_iter: int = 1_000_000,
) -> float:
    """Fixed-policy risk-sensitive gain via the Perron root.

    The gain equals (1/gamma) ln rho(Q) for Q(x, y) = exp(gamma c(x, u(x)))
    P_u(x, y).  Computed by power iteration with Collatz-Wielandt brackets on
    the rescaled matrix exp(gamma (c - max c)) P_u, which keeps all entries
    at or below 1.  Independent of the log-space span iteration.
    """
    gamma = _check_gamma(gamma)
    sub = model.under_policy(policy)
    if ergodicity_coefficient(sub) >= 1.0:
        raise NotErgodic("policy kernel has ergodicity coefficient >= 1")
    P = model.policy_kernel(policy)
    c = model.policy_reward(policy)
    c_max = float(c.max())
    Q = np.exp(gamma * (c - c_max))[:, None] * P
    v = np.ones(model.n_states) / model.n_states
    for _ in range(max_iter):
        qv = Q @ v
        ratios = qv / v
        lo, hi = float(ratios.min()), float(ratios.max())
        if hi - lo <= tol * max(hi, 1.0):
            return c_max + math.log(0.5 * (lo + hi)) / gamma
        v = qv / qv.sum()
    raise NoConvergence("power iteration did not bracket the Perron root")


def risk_time_extended_solve(
    model: Model,
    schedule: DiscountSchedule,
    gamma: float,
    k: int = 0,
    n_slices: int = 1,
    tol: float = 1e-10,
) -> RiskTimeExtendedSolution:
    """Backward recursion for the generally discounted risk-sensitive equation.

    Each slice applies the log-transformed operator with phi-weighted reward
    to the next slice; the minimum of the result is split off as
    lambda_seq[j] * gamma * phi(k + j) and the slice is stored at min 0.
    The recursion itself is exact; convergence toward the infinite-window
    solution is reported through slice_residuals (converged is True when the
    first slice's residual is at most tol).
    """
    gamma = _check_gamma(gamma)
    if ergodicity_coefficient(model) >= 1.0:
        raise NotErgodic("ergodicity coefficient >= 1")
    if n_slices < 1:
        raise InvalidModel("window must contain at least one slice")
    phi = schedule.phi_array(k, n_slices)
    if (phi <= 0.0).any():
        raise InvalidModel("schedule must be strictly positive over the window")
    cert, bound = certificate_for(model, gamma)
    s = model.n_states
    w_grid = np.empty((n_slices, s))
    lambda_seq = np.empty(n_slices)
    policy_seq = np.empty((n_slices, s), dtype=int)
    w_next = np.zeros(s)
    for j in range(n_slices - 1, -1, -1):
        vals, acts = _risk_values(model, gamma, w_next, phi=phi[j])
        m = vals.min()
        lambda_seq[j] = m / (gamma * phi[j])
        w_next = vals - m
        w_grid[j] = w_next
        policy_seq[j] = acts
    resid = np.empty(n_slices)
    for j in range(n_slices):
        nxt = w_grid[j + 1] if j + 1 < n_slices else np.zeros(s)
        resid[j] = span_seminorm(w_grid[j] - nxt)
    return RiskTimeExtendedSolution(
        start=k,
        gamma=gamma,
        w_grid=w_grid,
        lambda_seq=lambda_seq,
        policy_seq=policy_seq,
        slice_residuals=resid,
        converged=bool(resid[0] <= tol),
        certificate=cert,
        bound=bound,
    )


@dataclass(frozen=True)
class SweepRow:
    gamma: float
    lam: float
    certificate: str
    residual: float


def gamma_sweep(model: Model, policy: StationaryPolicy, gammas, tol: float = 1e-10) -> list:
    """Fixed-policy risk-sensitive gain across a list of risk factors.

    Returns rows sorted by gamma, including a gamma = 0 row computed from
    the additive Poisson equation (the small-risk limit).  The gains are
    nondecreasing in gamma.
    """
    rows = []
    avg: SpanSolution = poisson_solve(model, policy, tol=tol)
    rows.append(SweepRow(gamma=0.0, lam=avg.lam, certificate="", residual=avg.span_residual))
    for gamma in gammas:
        sol = multiplicative_poisson_solve(model, policy, gamma, tol=tol)
        rows.append(SweepRow(gamma=sol.gamma, lam=sol.lam, certificate=sol.certificate, residual=sol.residual))
    rows.sort(key=lambda r: r.gamma)
    return rows
