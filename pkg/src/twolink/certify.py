"""Analytic stability machinery for the two-link network.

Three certificate routes are implemented:

* the exact feasibility test for the infinite-buffer chain (a mean-demand
  routing balance must admit a density threshold vector ``theta`` at which
  both links drain strictly faster than they fill), searched over theta and
  bisected in the mean demand to get exact throughput;
* a discretized semi-infinite program certifying *stability* of the
  finite-buffer chain: the expected inflow at the upstream critical
  density, blended with the sending flows through ``theta in [0,1]^2``,
  must dominate the mean demand uniformly over the state box;
* the mirror-image program certifying *instability* with the upstream flow
  at saturation.

Supremum/infimum over the state box are bounded soundly by a uniform grid
plus a Lipschitz safety term, tightened by local adversarial polish and
grid doubling (a discretization/exchange scheme).  The module also
computes the positively invariant state box used to restrict the programs,
and numerical Lyapunov drift values used to cross-check certificates
against Monte Carlo estimates.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .network import (
    VARIANT_FINITE,
    VARIANT_INFINITE,
    InfeasibleGeometryError,
    NetworkSpec,
    NetworkState,
    VariantMismatchError,
    _crossing_density,
    capacity,
    eval_flow,
    routing_fractions,
    step_finite,
    step_infinite,
)
from .stochastic import (
    DemandModel,
    expected_compliance,
    expected_inflow,
    expected_inflow_grid,
    gauss_legendre,
)

STRICTNESS = 1e-6          # certified margins must clear this
UNSTABLE_SLACK_TOL = 1e-9  # max slack at or below this counts as infeasible
CAUCHY_TOL = 1e-4          # grid-refinement agreement required for "unstable"


class CertificateContradictionError(RuntimeError):
    """Stability and instability were certified for the same configuration."""


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaPoint:
    """A candidate density-threshold vector for the certificates."""

    theta_e1: float
    theta_e2: float

    def __post_init__(self):
        if self.theta_e1 < 0 or self.theta_e2 < 0:
            raise ValueError("theta must be componentwise nonnegative")

    def as_tuple(self) -> tuple[float, float]:
        return (self.theta_e1, self.theta_e2)


@dataclass
class Certificate:
    """Verdict of one certificate attempt, with witness and margin."""

    verdict: str                     # stable | unstable | inconclusive
    method: str                      # thm1 | thm2_sip | thm3_sip | monte_carlo
    witness: Optional[ThetaPoint]
    margin: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "method": self.method,
            "theta": list(self.witness.as_tuple()) if self.witness else None,
            "gamma": self.margin,
            "grid": self.diagnostics.get("grid"),
            "worst_point": self.diagnostics.get("worst_point"),
            "tolerance": self.diagnostics.get("strictness", STRICTNESS),
            "diagnostics": {
                k: v for k, v in self.diagnostics.items()
                if k not in ("grid", "worst_point", "strictness")
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


@dataclass(frozen=True)
class InvariantSet:
    """Box that the finite-buffer chain never leaves once entered.

    x_e0 >= x_e0_lo (the demand floor), x_e1 in [x_e1_lo, x_e1_hi],
    x_e2 in [0, x_e2_hi].
    """

    x_e1_lo: float
    x_e1_hi: float
    x_e2_hi: float
    x_e0_lo: float
    mode: str = "mass_balance"

    def __post_init__(self):
        if not (0.0 <= self.x_e1_lo <= self.x_e1_hi):
            raise ValueError("need 0 <= x_e1_lo <= x_e1_hi")
        if self.x_e2_hi < 0 or self.x_e0_lo < 0:
            raise ValueError("bounds must be nonnegative")

    def box(self) -> tuple[float, float, float, float]:
        """(x1_lo, x1_hi, x2_lo, x2_hi) for the parallel links."""
        return (self.x_e1_lo, self.x_e1_hi, 0.0, self.x_e2_hi)

    def contains(self, x: tuple[float, ...], tol: float = 1e-9) -> bool:
        x0, x1, x2 = x
        return (
            x0 >= self.x_e0_lo - tol
            and self.x_e1_lo - tol <= x1 <= self.x_e1_hi + tol
            and -tol <= x2 <= self.x_e2_hi + tol
        )


@dataclass(frozen=True)
class LyapunovSpec:
    """A Lyapunov or test function family with its parameters.

    * ``thm1_quadratic`` (infinite variant): half the squared sum of the
      positive excursions of the two densities above theta.
    * ``thm2_weighted`` (finite variant): x0 * (x0/2 + theta . (x1, x2)).
    * ``test_reciprocal`` (finite variant): xi1 - 1/(x0 + theta . (x1, x2)
      + xi2), bounded by xi1.
    """

    family: str
    theta: ThetaPoint
    xi1: float = 1.0
    xi2: float = 100.0

    def __post_init__(self):
        if self.family not in ("thm1_quadratic", "thm2_weighted", "test_reciprocal"):
            raise ValueError(f"unknown Lyapunov family {self.family!r}")
        if self.xi1 <= 0 or self.xi2 <= 0 or self.xi1 * self.xi2 < 1.0:
            raise ValueError("need xi1, xi2 > 0 with xi1*xi2 >= 1 so the test function is nonnegative")

    @property
    def variant(self) -> str:
        return VARIANT_INFINITE if self.family == "thm1_quadratic" else VARIANT_FINITE


def lyapunov_value(lyap: LyapunovSpec, x) -> float:
    """Evaluate the Lyapunov/test function at a density vector (or arrays)."""
    t1, t2 = lyap.theta.as_tuple()
    if lyap.family == "thm1_quadratic":
        x1, x2 = x
        s = np.maximum(x1 - t1, 0.0) + np.maximum(x2 - t2, 0.0)
        return 0.5 * s * s
    x0, x1, x2 = x
    lin = x0 + t1 * x1 + t2 * x2
    if lyap.family == "thm2_weighted":
        return x0 * (0.5 * x0 + t1 * x1 + t2 * x2)
    return lyap.xi1 - 1.0 / (lin + lyap.xi2)


# ---------------------------------------------------------------------------
# Infinite-buffer certificates (exact route)
# ---------------------------------------------------------------------------

def default_theta_cap(spec: NetworkSpec) -> float:
    """Search box edge for theta: 10x the density where sending flows saturate.

    The feasibility conditions keep improving as the major-link threshold
    grows (the logit split keeps pushing mass to the minor link), so the
    witness for near-capacity demand sits far beyond the saturation
    density; a 10x box keeps the certified throughput within the grid's
    reach while staying finite.
    """
    return 10.0 * max(
        spec.links["e1"].sending.saturation_density,
        spec.links["e2"].sending.saturation_density,
    )


def thm1_feasible(
    spec: NetworkSpec,
    alpha: float,
    theta: ThetaPoint,
    strictness: float = STRICTNESS,
) -> tuple[bool, float]:
    """Test the two strict drain conditions at one theta.

    Returns (feasible, slack) with slack = -max of the two left-hand sides;
    feasible means both inequalities clear the strictness margin.
    """
    if spec.variant != VARIANT_INFINITE:
        raise VariantMismatchError("thm1 applies to the infinite_buffer variant")
    t1, t2 = theta.as_tuple()
    b1, b2 = routing_fractions(spec.routing, t1, t2)
    ec = expected_compliance(spec.compliance, (t1, t2))
    lhs1 = (b1 + b2 * (1.0 - ec)) * alpha - eval_flow(spec.links["e1"].sending, t1)
    lhs2 = b2 * ec * alpha - eval_flow(spec.links["e2"].sending, t2)
    slack = -max(lhs1, lhs2)
    return slack >= strictness, slack


class _Thm1Searcher:
    """Vectorized slack evaluation over a theta grid, reusable across alpha.

    Both left-hand sides are affine in alpha for fixed theta, so the grid
    fields are precomputed once and each alpha costs one broadcast.
    """

    def __init__(self, spec: NetworkSpec, theta_cap: float, grid_n: int):
        self.spec = spec
        self.cap = theta_cap
        axis = np.linspace(0.0, theta_cap, grid_n)
        T1, T2 = np.meshgrid(axis, axis, indexing="ij")
        self.T1, self.T2 = T1.ravel(), T2.ravel()
        b1, b2 = routing_fractions(spec.routing, self.T1, self.T2)
        if spec.compliance.mean_fn is None:
            ec = 0.5 * spec.compliance.c_bar
        else:
            ec = np.vectorize(spec.compliance.mean_fn)(self.T1, self.T2)
        self.A1 = b1 + b2 * (1.0 - ec)
        self.A2 = b2 * ec
        self.F1 = eval_flow(spec.links["e1"].sending, self.T1)
        self.F2 = eval_flow(spec.links["e2"].sending, self.T2)

    def slack_grid(self, alpha: float) -> np.ndarray:
        return np.minimum(self.F1 - self.A1 * alpha, self.F2 - self.A2 * alpha)

    def slack_at(self, alpha: float, t1: float, t2: float) -> float:
        _, slack = thm1_feasible(self.spec, alpha, ThetaPoint(max(t1, 0.0), max(t2, 0.0)), 0.0)
        return slack

    def best(self, alpha: float, n_starts: int = 5) -> tuple[float, ThetaPoint]:
        slacks = self.slack_grid(alpha)
        order = np.argsort(-slacks, kind="stable")[:n_starts]
        best_val = float(slacks[order[0]])
        best_theta = (float(self.T1[order[0]]), float(self.T2[order[0]]))
        for idx in order:
            res = minimize(
                lambda t: -self.slack_at(alpha, t[0], t[1]),
                x0=[self.T1[idx], self.T2[idx]],
                method="Nelder-Mead",
                options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 400},
            )
            if -res.fun > best_val:
                best_val = float(-res.fun)
                best_theta = (max(float(res.x[0]), 0.0), max(float(res.x[1]), 0.0))
        return best_val, ThetaPoint(*best_theta)


def _thm1_verdict(
    searchers: tuple[_Thm1Searcher, _Thm1Searcher],
    alpha: float,
    strictness: float,
) -> Certificate:
    coarse, fine = searchers
    s_coarse, th_coarse = coarse.best(alpha)
    if s_coarse >= strictness:
        return Certificate(
            "stable", "thm1", th_coarse, s_coarse,
            {"grid": [int(math.isqrt(coarse.T1.size))], "theta_cap": coarse.cap,
             "strictness": strictness},
        )
    s_fine, th_fine = fine.best(alpha)
    best_s, best_th = (s_fine, th_fine) if s_fine > s_coarse else (s_coarse, th_coarse)
    grids = [int(math.isqrt(coarse.T1.size)), int(math.isqrt(fine.T1.size))]
    cauchy_gap = abs(s_fine - s_coarse)
    diag = {"grid": grids, "theta_cap": coarse.cap, "cauchy_gap": cauchy_gap,
            "strictness": strictness}
    if best_s >= strictness:
        return Certificate("stable", "thm1", best_th, best_s, diag)
    if best_s <= UNSTABLE_SLACK_TOL and cauchy_gap <= CAUCHY_TOL:
        return Certificate("unstable", "thm1", best_th, -best_s, diag)
    return Certificate("inconclusive", "thm1", best_th, best_s, diag)


def thm1_search(
    spec: NetworkSpec,
    alpha: float,
    strictness: float = STRICTNESS,
    theta_cap: Optional[float] = None,
    grid_n: int = 17,
) -> Certificate:
    """Search for a feasible theta; exact stable/unstable split up to the grid.

    Coarse-to-fine grid over [0, theta_cap]^2 with Nelder-Mead polish from
    the best starts.  The maximized slack decides: at or above the
    strictness margin the chain is stable; at or below zero (with the two
    grid resolutions agreeing) no theta exists and the chain is unstable;
    the remaining sliver is reported inconclusive at the resolution used.
    """
    if spec.variant != VARIANT_INFINITE:
        raise VariantMismatchError("thm1 applies to the infinite_buffer variant")
    cap = default_theta_cap(spec) if theta_cap is None else theta_cap
    searchers = (_Thm1Searcher(spec, cap, grid_n), _Thm1Searcher(spec, cap, 2 * grid_n - 1))
    return _thm1_verdict(searchers, alpha, strictness)


def thm1_throughput(
    spec: NetworkSpec,
    tol: float = 5e-4,
    strictness: float = STRICTNESS,
    theta_cap: Optional[float] = None,
    grid_n: int = 17,
) -> float:
    """Largest certified-stable mean demand, by bisection.

    Both feasibility conditions tighten as alpha grows, so the certified
    region is an interval [0, throughput); bisection over
    [0, Q_e1 + Q_e2] is exact up to ``tol``.
    """
    if spec.variant != VARIANT_INFINITE:
        raise VariantMismatchError("thm1 applies to the infinite_buffer variant")
    cap = default_theta_cap(spec) if theta_cap is None else theta_cap
    searchers = (_Thm1Searcher(spec, cap, grid_n), _Thm1Searcher(spec, cap, 2 * grid_n - 1))
    hi = capacity(spec.links["e1"]) + capacity(spec.links["e2"])
    lo = 0.0
    if _thm1_verdict(searchers, lo, strictness).verdict != "stable":
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _thm1_verdict(searchers, mid, strictness).verdict == "stable":
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# Finite-buffer certificates (semi-infinite programs)
# ---------------------------------------------------------------------------

def critical_density(spec: NetworkSpec) -> float:
    """Smallest upstream density at which e0 discharges at full capacity."""
    if spec.variant != VARIANT_FINITE:
        raise VariantMismatchError("critical density is defined for the finite variant")
    return spec.links["e0"].sending.saturation_density


def sip_constraint_thm2(
    spec: NetworkSpec,
    alpha: float,
    theta: ThetaPoint,
    x: tuple[float, float],
) -> float:
    """Pointwise constraint value of the stability program at state x.

    alpha - sum_e (1-theta_e) E_x[q_e_in at the critical upstream flow]
          - sum_e theta_e f_e(x_e);  stability requires this to stay below
    -gamma on the whole state box.
    """
    if spec.variant != VARIANT_FINITE:
        raise VariantMismatchError("the stability program applies to the finite variant")
    t1, t2 = theta.as_tuple()
    F = eval_flow(spec.links["e0"].sending, critical_density(spec))
    e1 = expected_inflow(spec, "e1", F, x)
    e2 = expected_inflow(spec, "e2", F, x)
    f1 = eval_flow(spec.links["e1"].sending, x[0])
    f2 = eval_flow(spec.links["e2"].sending, x[1])
    return alpha - (1.0 - t1) * e1 - (1.0 - t2) * e2 - t1 * f1 - t2 * f2


def _full_box(spec: NetworkSpec) -> tuple[float, float, float, float]:
    return (0.0, spec.links["e1"].jam_density, 0.0, spec.links["e2"].jam_density)


class _SipField:
    """Grid evaluation of the constraint field over the state box.

    The constraint is affine in theta for fixed x, so the grid stores
    base = E1 + E2 and the coefficients E_e - f_e; the "stabilizing rate"
    rhs(theta) = (1-theta).E + theta.f is then one broadcast per theta.
    """

    def __init__(self, spec: NetworkSpec, box: tuple[float, float, float, float], m: int):
        self.spec = spec
        self.box = box
        self.m = m
        x1 = np.linspace(box[0], box[1], m)
        x2 = np.linspace(box[2], box[3], m)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        self.X1, self.X2 = X1.ravel(), X2.ravel()
        self.h1 = (box[1] - box[0]) / (m - 1) if m > 1 else 0.0
        self.h2 = (box[3] - box[2]) / (m - 1) if m > 1 else 0.0
        self.F = float(spec.links["e0"].sending.saturation)
        E1 = expected_inflow_grid(spec, "e1", self.F, self.X1, self.X2)
        E2 = expected_inflow_grid(spec, "e2", self.F, self.X1, self.X2)
        f1 = eval_flow(spec.links["e1"].sending, self.X1)
        f2 = eval_flow(spec.links["e2"].sending, self.X2)
        self.base = E1 + E2
        self.c1 = E1 - f1
        self.c2 = E2 - f2

    def rhs(self, theta: ThetaPoint) -> np.ndarray:
        t1, t2 = theta.as_tuple()
        return self.base - t1 * self.c1 - t2 * self.c2

    def rhs_batch(self, thetas: np.ndarray) -> np.ndarray:
        return self.base[None, :] - thetas @ np.stack([self.c1, self.c2])

    def rhs_continuous(self, theta: ThetaPoint, x1: float, x2: float) -> float:
        t1, t2 = theta.as_tuple()
        x1 = min(max(x1, self.box[0]), self.box[1])
        x2 = min(max(x2, self.box[2]), self.box[3])
        e1 = expected_inflow(self.spec, "e1", self.F, (x1, x2))
        e2 = expected_inflow(self.spec, "e2", self.F, (x1, x2))
        f1 = eval_flow(self.spec.links["e1"].sending, x1)
        f2 = eval_flow(self.spec.links["e2"].sending, x2)
        return (1.0 - t1) * e1 + (1.0 - t2) * e2 + t1 * f1 + t2 * f2

    def safety(self, theta: ThetaPoint) -> float:
        """Half-cell Lipschitz bound on the constraint between grid nodes.

        The expected-inflow fields inherit F*c_bar*nu/8 from the logit
        derivative bound nu*b*(1-b) <= nu/4 and the receiving slopes; the
        sending slopes enter through the theta-weighted terms.
        """
        t1, t2 = theta.as_tuple()
        nu1, nu2 = self.spec.routing.nu_e1, self.spec.routing.nu_e2
        c_bar = self.spec.compliance.c_bar
        w1 = self.spec.links["e1"].receiving.max_slope
        w2 = self.spec.links["e2"].receiving.max_slope
        v1 = self.spec.links["e1"].sending.max_slope
        v2 = self.spec.links["e2"].sending.max_slope
        kappa = self.F * c_bar / 8.0
        L1 = (1.0 - t1) * (kappa * nu1 + w1) + (1.0 - t2) * kappa * nu1 + t1 * v1
        L2 = (1.0 - t1) * kappa * nu2 + (1.0 - t2) * (kappa * nu2 + w2) + t2 * v2
        return 0.5 * (L1 * self.h1 + L2 * self.h2)


def _clip_unit(t) -> tuple[float, float]:
    return (min(max(float(t[0]), 0.0), 1.0), min(max(float(t[1]), 0.0), 1.0))


def _theta_opt(field: _SipField, maximize_min: bool, grid_n: int = 17) -> ThetaPoint:
    """Pick theta in [0,1]^2 optimizing the grid margin (then NM polish)."""
    axis = np.linspace(0.0, 1.0, grid_n)
    T1, T2 = np.meshgrid(axis, axis, indexing="ij")
    thetas = np.column_stack([T1.ravel(), T2.ravel()])
    vals = field.rhs_batch(thetas)
    score = vals.min(axis=1) if maximize_min else -vals.max(axis=1)
    order = np.argsort(-score, kind="stable")[:3]
    best_theta = _clip_unit(thetas[order[0]])
    best_score = float(score[order[0]])

    def objective(t):
        tp = ThetaPoint(*_clip_unit(t))
        r = field.rhs(tp)
        return -(r.min() if maximize_min else -r.max())

    for idx in order:
        res = minimize(
            objective, x0=thetas[idx], method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 200},
        )
        if -res.fun > best_score:
            best_score = float(-res.fun)
            best_theta = _clip_unit(res.x)
    return ThetaPoint(*best_theta)


def _polish_extremum(field: _SipField, theta: ThetaPoint, x0: tuple[float, float], find_min: bool) -> float:
    sign = 1.0 if find_min else -1.0
    res = minimize(
        lambda x: sign * field.rhs_continuous(theta, x[0], x[1]),
        x0=list(x0), method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 200},
    )
    return float(sign * res.fun)


def _sip_certify(
    spec: NetworkSpec,
    alpha: float,
    stability: bool,
    domain: Optional[InvariantSet],
    strictness: float,
    theta_grid_n: int,
    x_grid_n: int,
    x_grid_max: int,
) -> Certificate:
    if spec.variant != VARIANT_FINITE:
        raise VariantMismatchError("the semi-infinite programs apply to the finite variant")
    box = domain.box() if domain is not None else _full_box(spec)
    method = "thm2_sip" if stability else "thm3_sip"
    field = _SipField(spec, box, x_grid_n)
    theta = _theta_opt(field, maximize_min=stability, grid_n=theta_grid_n)
    m = x_grid_n
    while True:
        if field.m != m:
            field = _SipField(spec, box, m)
        rhs = field.rhs(theta)
        safety = field.safety(theta)
        if stability:
            idx = int(np.argmin(rhs))
            grid_extreme = float(rhs[idx])
            polished = _polish_extremum(field, theta, (field.X1[idx], field.X2[idx]), find_min=True)
            attained = min(grid_extreme, polished)
            certified_gamma = (grid_extreme - safety) - alpha   # sound lower bound on -sup LHS
            attained_gamma = attained - alpha
            ok = certified_gamma > strictness
            hopeless = attained_gamma <= strictness
        else:
            idx = int(np.argmax(rhs))
            grid_extreme = float(rhs[idx])
            polished = _polish_extremum(field, theta, (field.X1[idx], field.X2[idx]), find_min=False)
            attained = max(grid_extreme, polished)
            certified_gamma = alpha - (grid_extreme + safety)   # sound lower bound on inf LHS
            attained_gamma = alpha - attained
            ok = certified_gamma >= 0.0
            hopeless = attained_gamma < 0.0
        diag = {
            "grid": [m, m],
            "worst_point": [float(field.X1[idx]), float(field.X2[idx])],
            "safety": safety,
            "domain": list(box),
            "alpha": alpha,
            "strictness": strictness,
            "upstream_flow": field.F,
            "attained_gamma": attained_gamma,
            "certified_gamma": certified_gamma,
        }
        if ok:
            verdict = "stable" if stability else "unstable"
            return Certificate(verdict, method, theta, certified_gamma, diag)
        if hopeless:
            diag["note"] = "constraint sign attained; not certifiable at this theta"
            return Certificate("inconclusive", method, theta, attained_gamma, diag)
        if m >= x_grid_max:
            diag["note"] = "resolution cap reached with undecided safety band"
            return Certificate("inconclusive", method, theta, certified_gamma, diag)
        m = 2 * m - 1


def thm2_certify(
    spec: NetworkSpec,
    alpha: float,
    domain: Optional[InvariantSet] = None,
    strictness: float = STRICTNESS,
    theta_grid_n: int = 17,
    x_grid_n: int = 65,
    x_grid_max: int = 513,
) -> Certificate:
    """Stability program P1: maximize the uniform drain margin over theta.

    Verdict "stable" iff the maximized margin clears the strictness
    tolerance with the grid-plus-Lipschitz bound; otherwise inconclusive
    (this route never claims instability).
    """
    return _sip_certify(spec, alpha, True, domain, strictness, theta_grid_n, x_grid_n, x_grid_max)


def thm3_certify(
    spec: NetworkSpec,
    alpha: float,
    domain: Optional[InvariantSet] = None,
    strictness: float = STRICTNESS,
    theta_grid_n: int = 17,
    x_grid_n: int = 65,
    x_grid_max: int = 513,
) -> Certificate:
    """Instability program P2 with the upstream link at saturation.

    Verdict "unstable" iff the constraint stays nonnegative over the whole
    box (grid minus the Lipschitz safety term); otherwise inconclusive.
    """
    return _sip_certify(spec, alpha, False, domain, strictness, theta_grid_n, x_grid_n, x_grid_max)


def _spec_with_demand_lo(spec: NetworkSpec, d_lo: float) -> NetworkSpec:
    return dataclasses.replace(spec, demand=DemandModel(lo=d_lo, hi=spec.demand.hi))


def throughput_bounds(
    spec: NetworkSpec,
    tol: float = 1e-3,
    domain_mode: str = "full_box",
    eq22a_mode: str = "mass_balance",
    **certify_kwargs,
) -> tuple[float, float]:
    """(lower, upper) throughput bounds for the finite-buffer network.

    lower = largest mean demand certified stable by the stability program,
    upper = smallest mean demand certified unstable by the instability
    program, both by bisection.  The demand family pins hi, so alpha is
    swept by moving the lower endpoint: the feasible range is
    [hi/2, Q_e1 + Q_e2].  With ``domain_mode="invariant_set"`` each
    certificate is restricted to the invariant box recomputed for its own
    demand floor.
    """
    if spec.variant != VARIANT_FINITE:
        raise VariantMismatchError("throughput bounds apply to the finite variant")
    cap = capacity(spec.links["e1"]) + capacity(spec.links["e2"])
    floor = 0.5 * spec.demand.hi

    def certify(alpha: float, stability: bool) -> Certificate:
        sp = _spec_with_demand_lo(spec, max(0.0, 2.0 * alpha - spec.demand.hi))
        dom = invariant_set(sp, mode=eq22a_mode) if domain_mode == "invariant_set" else None
        fn = thm2_certify if stability else thm3_certify
        return fn(sp, alpha, domain=dom, **certify_kwargs)

    # lower bound: sup of certified-stable alpha
    stable_cert = certify(floor, True)
    if stable_cert.verdict == "stable":
        lo, hi = floor, cap
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            cert = certify(mid, True)
            if cert.verdict == "stable":
                lo, stable_cert = mid, cert
            else:
                hi = mid
        lower = lo
    else:
        lower, stable_cert = floor, None

    # upper bound: inf of certified-unstable alpha; the demand family caps the
    # mean at hi (degenerate support), and capacity is an analytic fallback
    probe_hi = min(cap * 1.25 + 0.1, spec.demand.hi)
    floor_cert = certify(floor, False)
    if floor_cert.verdict == "unstable":
        upper, unstable_cert = floor, floor_cert
    else:
        probe_cert = certify(probe_hi, False) if probe_hi > floor else None
        if probe_cert is None or probe_cert.verdict != "unstable":
            upper, unstable_cert = cap, None
        else:
            lo, hi = floor, probe_hi
            unstable_cert = probe_cert
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                cert = certify(mid, False)
                if cert.verdict == "unstable":
                    hi, unstable_cert = mid, cert
                else:
                    lo = mid
            upper = min(hi, cap)

    if lower > upper + tol:
        stable_w = stable_cert.witness.as_tuple() if stable_cert and stable_cert.witness else None
        unstable_w = unstable_cert.witness.as_tuple() if unstable_cert and unstable_cert.witness else None
        raise CertificateContradictionError(
            f"stability certified up to alpha={lower!r} (theta={stable_w}) but "
            f"instability from alpha={upper!r} (theta={unstable_w})"
        )
    return lower, max(upper, lower)


# ---------------------------------------------------------------------------
# Fixed-point diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointProbe:
    """Result of iterating the deterministic dynamics at frozen draws.

    The certificates assume some constant (d, c) admits a finite limit
    state (with strictly slack receiving flows in the spillback variant);
    this probe checks that numerically for one (d, c).  It is a
    diagnostic, not a proof.
    """

    state: tuple[float, ...]
    converged: bool
    iterations: int
    residual: float
    receiving_slack: Optional[tuple[float, float]] = None  # r_e - q_e at the limit

    @property
    def strictly_below_receiving(self) -> Optional[bool]:
        if self.receiving_slack is None:
            return None
        return all(s > 0.0 for s in self.receiving_slack)


def fixed_point_probe(
    spec: NetworkSpec,
    d: float,
    c: float,
    max_iters: int = 200_000,
    tol: float = 1e-12,
) -> FixedPointProbe:
    finite = spec.variant == VARIANT_FINITE
    step = step_finite if finite else step_infinite
    state = NetworkState((0.0,) * (3 if finite else 2))
    residual = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        nxt = step(spec, state, d, c)
        residual = max(abs(a - b) for a, b in zip(nxt.x, state.x))
        state = nxt
        if residual < tol:
            break
    converged = residual < tol
    slack = None
    if finite:
        x0, x1, x2 = state.x
        upstream = eval_flow(spec.links["e0"].sending, x0)
        b1, b2 = routing_fractions(spec.routing, x1, x2)
        bt2 = b2 * c
        r1 = eval_flow(spec.links["e1"].receiving, x1)
        r2 = eval_flow(spec.links["e2"].receiving, x2)
        slack = (r1 - (1.0 - bt2) * upstream, r2 - bt2 * upstream)
    return FixedPointProbe(state.x, converged, it, residual, slack)


# ---------------------------------------------------------------------------
# Invariant set
# ---------------------------------------------------------------------------

def _bisect(fn, lo: float, hi: float, iters: int = 200) -> float:
    """Root of a sign-changing scalar function by plain bisection."""
    flo = fn(lo)
    if flo == 0.0:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def invariant_set(spec: NetworkSpec, mode: str = "mass_balance") -> InvariantSet:
    """Compute the positively invariant box of the finite-buffer chain.

    * x_e1_hi solves r_e1(x) = f_e1(x): the exact sending/receiving
      crossing of the major link.
    * x_e2_hi solves beta_e2(x_e1_hi, x) * F_crit * c_bar = f_e2(x): the
      largest minor-link density sustainable when the major link is at its
      cap and every advised driver complies.
    * x_e1_lo balances the guaranteed low-demand inflow against the
      sending flow.  ``mode="mass_balance"`` uses
      (1 - c_bar * beta_e2(x, 0)) * d_lo = f_e1(x); ``mode="literal"``
      keeps an extra factor of x on the compliant share,
      beta_e1(x,0) * x * d_lo + beta_e2(x,0) * (1-c_bar) * d_lo = f_e1(x).
      Both are exposed; mass balance is the default and the variant used
      by the invariance tests.

    If the low-demand balance has no root below x_e1_hi the lower edge is
    clamped to x_e1_hi.
    """
    if spec.variant != VARIANT_FINITE:
        raise VariantMismatchError("the invariant set applies to the finite variant")
    if mode not in ("mass_balance", "literal"):
        raise ValueError("mode must be 'mass_balance' or 'literal'")
    link1, link2 = spec.links["e1"], spec.links["e2"]
    x1_hi = _crossing_density(link1)
    if x1_hi is None or not (0.0 <= x1_hi <= link1.jam_density + 1e-12):
        raise InfeasibleGeometryError("sending and receiving flows of e1 do not cross")
    x1_hi = min(x1_hi, link1.jam_density)

    f_crit = float(spec.links["e0"].sending.saturation)
    c_bar = spec.compliance.c_bar

    def g2(x2: float) -> float:
        _, b2 = routing_fractions(spec.routing, x1_hi, x2)
        return b2 * f_crit * c_bar - eval_flow(link2.sending, x2)

    jam2 = link2.jam_density
    if g2(0.0) <= 0.0:
        x2_hi = 0.0
    elif g2(jam2) > 0.0:
        raise InfeasibleGeometryError("minor-link balance has no root below jam density")
    else:
        x2_hi = _bisect(g2, 0.0, jam2)

    d_lo = spec.demand.lo
    if mode == "mass_balance":
        def g1(x1: float) -> float:
            _, b2 = routing_fractions(spec.routing, x1, 0.0)
            return (1.0 - c_bar * b2) * d_lo - eval_flow(link1.sending, x1)
        if g1(0.0) <= 0.0:
            x1_lo = 0.0
        elif g1(x1_hi) > 0.0:
            x1_lo = x1_hi
        else:
            x1_lo = _bisect(g1, 0.0, x1_hi)
    else:
        def g1(x1: float) -> float:
            b1, b2 = routing_fractions(spec.routing, x1, 0.0)
            return b1 * x1 * d_lo + b2 * (1.0 - c_bar) * d_lo - eval_flow(link1.sending, x1)
        # the literal form need not be monotone: scan for the first sign change
        xs = np.linspace(0.0, x1_hi, 2049)
        vals = np.array([g1(float(v)) for v in xs])
        if vals[0] <= 0.0:
            x1_lo = 0.0
        else:
            idx = np.nonzero(vals <= 0.0)[0]
            x1_lo = x1_hi if idx.size == 0 else _bisect(g1, float(xs[idx[0] - 1]), float(xs[idx[0]]))

    return InvariantSet(x_e1_lo=x1_lo, x_e1_hi=x1_hi, x_e2_hi=x2_hi, x_e0_lo=d_lo, mode=mode)


# ---------------------------------------------------------------------------
# Numerical Lyapunov drift
# ---------------------------------------------------------------------------

def _pieces(breaks: list[float], lo: float, hi: float) -> list[tuple[float, float]]:
    pts = sorted({lo, hi, *[b for b in breaks if lo < b < hi]})
    return list(zip(pts, pts[1:]))


def drift(
    spec: NetworkSpec,
    lyap: LyapunovSpec,
    x: tuple[float, ...],
    order: int = 16,
    d_order: int = 24,
    tol: float = 1e-10,
    max_doublings: int = 3,
) -> float:
    """Expected one-step drift E[V(next)] - V(x) by piecewise quadrature.

    The one-step map is piecewise affine in the compliance draw (kinks
    where a receiving flow starts or stops binding, or where a density
    crosses its theta threshold), so the compliance integral is split at
    the exact kink locations and Gauss-Legendre is spectrally accurate on
    each piece; the demand integral is split analogously.  Node counts are
    doubled until two successive estimates agree to ``tol``.
    """
    if lyap.variant != spec.variant:
        raise VariantMismatchError(
            f"Lyapunov family {lyap.family!r} applies to the {lyap.variant!r} variant"
        )
    if spec.compliance.mean_fn is not None:
        raise NotImplementedError("drift quadrature requires the state-independent uniform family")
    est = _drift_once(spec, lyap, x, order, d_order)
    for _ in range(max_doublings):
        order *= 2
        d_order *= 2
        nxt = _drift_once(spec, lyap, x, order, d_order)
        if abs(nxt - est) < tol:
            return nxt
        est = nxt
    return est


def _drift_once(spec, lyap, x, order, d_order) -> float:
    dlo, dhi = spec.demand.lo, spec.demand.hi
    c_bar = spec.compliance.c_bar
    t1, t2 = lyap.theta.as_tuple()

    if spec.variant == VARIANT_INFINITE:
        x1, x2 = x
        s1 = spec.scale("e1")
        s2 = spec.scale("e2")
        _, b2 = routing_fractions(spec.routing, x1, x2)
        f1v = eval_flow(spec.links["e1"].sending, x1)
        f2v = eval_flow(spec.links["e2"].sending, x2)
        A = x1 - t1 - s1 * f1v      # x1'(d,c) = A + t1 + s1*d - s1*b2*d*c
        B = t2 - x2 + s2 * f2v      # x2'(d,c) = theta2 - B + s2*b2*d*c

        def value_at(d: float, cs: np.ndarray) -> np.ndarray:
            x1p = x1 + s1 * (d * (1.0 - b2 * cs) - f1v)
            x2p = x2 + s2 * (d * b2 * cs - f2v)
            return lyapunov_value(lyap, (x1p, x2p))

        def c_kinks(d: float) -> list[float]:
            ks = []
            if b2 > 0.0 and d > 0.0:
                ks.append((A + s1 * d) / (s1 * b2 * d))   # x1' = theta1
                ks.append(B / (s2 * b2 * d))              # x2' = theta2
            return ks

        d_breaks = [-A / s1]                              # x1'(d, c=0) = theta1
        if b2 > 0.0:
            denom = s1 * (c_bar * b2 - 1.0)
            if denom != 0.0:
                d_breaks.append(A / denom)                # x1'(d, c_bar) = theta1
            if c_bar > 0.0:
                d_breaks.append(B / (s2 * b2 * c_bar))    # x2'(d, c_bar) = theta2
            d_breaks.append(B / s2 - A / s1)              # kink curves crossing
    else:
        x0, x1, x2 = x
        s0, s1, s2 = spec.scale("e0"), spec.scale("e1"), spec.scale("e2")
        _, b2 = routing_fractions(spec.routing, x1, x2)
        F = eval_flow(spec.links["e0"].sending, x0)
        r1v = eval_flow(spec.links["e1"].receiving, x1)
        r2v = eval_flow(spec.links["e2"].receiving, x2)
        f1v = eval_flow(spec.links["e1"].sending, x1)
        f2v = eval_flow(spec.links["e2"].sending, x2)

        def value_at(d: float, cs: np.ndarray) -> np.ndarray:
            q1 = np.minimum((1.0 - b2 * cs) * F, r1v)
            q2 = np.minimum(b2 * cs * F, r2v)
            x0p = x0 + s0 * (d - q1 - q2)
            x1p = x1 + s1 * (q1 - f1v)
            x2p = x2 + s2 * (q2 - f2v)
            return lyapunov_value(lyap, (x0p, x1p, x2p))

        def c_kinks(d: float) -> list[float]:
            ks = []
            if b2 > 0.0 and F > 0.0:
                if F > r1v:
                    ks.append((1.0 - r1v / F) / b2)
                ks.append(r2v / (b2 * F))
            return ks

        d_breaks = []

    def inner(d: float) -> float:
        if c_bar == 0.0:
            return float(value_at(d, np.asarray([0.0]))[0])
        total = 0.0
        for a, b in _pieces(c_kinks(d), 0.0, c_bar):
            cs, ws = gauss_legendre(order, a, b)
            total += float(np.dot(ws, value_at(d, cs)))
        return total / c_bar

    if dhi == dlo:
        expected = inner(dlo)
    else:
        expected = 0.0
        for a, b in _pieces(d_breaks, dlo, dhi):
            ds, ws = gauss_legendre(d_order, a, b)
            expected += float(np.dot(ws, [inner(float(d)) for d in ds]))
        expected /= (dhi - dlo)

    return expected - float(lyapunov_value(lyap, x))
