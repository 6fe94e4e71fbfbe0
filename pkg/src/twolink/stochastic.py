"""Demand and compliance models, seeded random streams, and the exact
conditional expectations the stability certificates are built on.

The shipped families match the experimental setup this package targets:
i.i.d. uniform demand on a compact interval and i.i.d. uniform compliance
on [0, c_bar], independent of the traffic state.  A hook for a
state-dependent compliance mean is reserved (validated for the required
monotonicity) but no state-dependent density ships, so the certificate
integrals stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .network import (
    INFINITE_FLOW,
    LinkSpec,
    NetworkSpec,
    eval_flow,
    routing_fractions,
)

ArrayLike = Union[float, np.ndarray]


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DemandModel:
    """Uniform i.i.d. demand on the compact interval [lo, hi]."""

    lo: float
    hi: float
    family: str = "uniform"

    def __post_init__(self):
        if self.family != "uniform":
            raise ValueError("only the uniform demand family ships")
        if not (0.0 <= self.lo <= self.hi) or not math.isfinite(self.hi):
            raise ValueError("demand support must satisfy 0 <= lo <= hi < inf")

    @property
    def mean(self) -> float:
        """The mean demand alpha = (lo + hi) / 2."""
        return 0.5 * (self.lo + self.hi)


def _check_mean_fn_monotone(mean_fn: Callable[[float, float], float]) -> None:
    # Finite-difference sign test: nondecreasing in x_e1, nonincreasing in x_e2.
    grid = np.linspace(0.0, 5.0, 11)
    vals = np.array([[mean_fn(a, b) for b in grid] for a in grid])
    if np.any(vals < -1e-12) or np.any(vals > 1.0 + 1e-12):
        raise ValueError("mean_fn must map into [0, 1]")
    if np.any(np.diff(vals, axis=0) < -1e-9):
        raise ValueError("mean_fn must be nondecreasing in x_e1")
    if np.any(np.diff(vals, axis=1) > 1e-9):
        raise ValueError("mean_fn must be nonincreasing in x_e2")


@dataclass(frozen=True)
class ComplianceModel:
    """Uniform i.i.d. compliance on [0, c_bar] with c_bar in [0, 1].

    ``mean_fn`` is a reserved hook for a state-dependent conditional mean
    (x_e1, x_e2) -> E[C | x]; when present it must be nondecreasing in the
    major-link density and nonincreasing in the minor-link density, which
    is checked at construction.  State-dependent *densities* are out of
    scope; expectation integrals require the state-independent family.
    """

    c_bar: float
    family: str = "uniform_state_independent"
    mean_fn: Optional[Callable[[float, float], float]] = None

    def __post_init__(self):
        if self.family != "uniform_state_independent":
            raise ValueError("only the state-independent uniform compliance family ships")
        if not (0.0 <= self.c_bar <= 1.0):
            raise ValueError("compliance support must lie inside [0, 1]")
        if self.mean_fn is not None:
            _check_mean_fn_monotone(self.mean_fn)

    @property
    def lo(self) -> float:
        return 0.0

    @property
    def hi(self) -> float:
        return self.c_bar


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

@dataclass
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Equal keys reproduce identical draw sequences bit-exactly; distinct
    stream ids give statistically independent streams (Philox).  Instances
    are stateful and single-owner: parallel workers each derive their own
    stream id.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or not (0 <= self.stream_id < 2**64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        self._gen = np.random.Generator(bitgen)

    def random(self, size=None):
        """Uniform [0, 1) draws."""
        return self._gen.random(size)

    def uniform_pairs(self, n: int) -> np.ndarray:
        """n rows of (demand-u, compliance-u) draws, consumed row-major."""
        return self._gen.random((n, 2))


def sample_demand(model: DemandModel, rng: RngStream) -> float:
    """One uniform draw from the demand support."""
    u = float(rng.random())
    return model.lo + (model.hi - model.lo) * u


def sample_compliance(model: ComplianceModel, x: tuple[float, float], rng: RngStream) -> float:
    """One uniform draw from [0, c_bar]; the state enters only through the
    reserved mean hook, which the shipped family does not use."""
    u = float(rng.random())
    return model.c_bar * u


def expected_compliance(model: ComplianceModel, x: tuple[float, float]) -> float:
    """Conditional mean compliance at state x: c_bar/2 for the shipped family."""
    if model.mean_fn is not None:
        return float(model.mean_fn(x[0], x[1]))
    return 0.5 * model.c_bar


# ---------------------------------------------------------------------------
# Expected inflows
# ---------------------------------------------------------------------------

def _require_uniform_compliance(spec: NetworkSpec) -> float:
    if spec.compliance.mean_fn is not None:
        raise NotImplementedError(
            "expected inflows are exact only for the state-independent uniform family"
        )
    return spec.compliance.c_bar


def expected_inflow_grid(
    spec: NetworkSpec,
    link_id: str,
    upstream_flow: float,
    x_e1: np.ndarray,
    x_e2: np.ndarray,
) -> np.ndarray:
    """E over C of min(beta~_e(x, C) * F, r_e(x_e)), vectorized over states.

    For uniform C on [0, c_bar] the integrand is affine in c with at most
    one kink where the receiving flow starts to bind, so the integral is a
    clipped-kink closed form.
    """
    if link_id not in ("e1", "e2"):
        raise ValueError("expected inflow is defined for the parallel links")
    if not (upstream_flow >= 0 and math.isfinite(upstream_flow)):
        raise ValueError("upstream flow must be finite and nonnegative")
    c_bar = _require_uniform_compliance(spec)
    x_e1 = np.asarray(x_e1, dtype=float)
    x_e2 = np.asarray(x_e2, dtype=float)
    _, b2 = routing_fractions(spec.routing, x_e1, x_e2)
    b2 = np.asarray(b2, dtype=float)
    link = spec.links[link_id]
    F = upstream_flow

    if link.receiving.unbounded:
        r = np.full(np.broadcast(x_e1, x_e2, b2).shape, INFINITE_FLOW)
    else:
        xe = x_e1 if link_id == "e1" else x_e2
        r = np.asarray(eval_flow(link.receiving, xe), dtype=float)
        r = np.broadcast_to(r, np.broadcast(x_e1, x_e2, b2).shape).copy()

    inf_mask = np.isinf(r)
    r_fin = np.where(inf_mask, 0.0, r)

    if link_id == "e2":
        # integrand min(b2*c*F, r), increasing in c, kink at r/(b2*F)
        slope = b2 * F
        if c_bar == 0.0:
            return np.zeros_like(r_fin)
        with np.errstate(divide="ignore", invalid="ignore"):
            ck = np.where(slope > 0.0, r_fin / np.where(slope > 0.0, slope, 1.0), c_bar)
        ck = np.where(inf_mask, c_bar, np.clip(ck, 0.0, c_bar))
        out = (0.5 * slope * ck**2 + r_fin * (c_bar - ck)) / c_bar
        out = np.where(inf_mask, 0.5 * slope * c_bar, out)
        return out

    # e1: integrand min((1 - b2*c)*F, r), decreasing in c, kink where it meets r
    if c_bar == 0.0:
        return np.where(inf_mask, F, np.minimum(F, r_fin))
    if F == 0.0:
        return np.zeros_like(r_fin)
    with np.errstate(divide="ignore", invalid="ignore"):
        ck = np.where(b2 > 0.0, (1.0 - r_fin / F) / np.where(b2 > 0.0, b2, 1.0), 0.0)
    ck = np.clip(ck, 0.0, c_bar)
    # pieces: [0, ck] capped at r, [ck, c_bar] on the affine branch
    affine_part = F * ((c_bar - ck) - 0.5 * b2 * (c_bar**2 - ck**2))
    out = (r_fin * ck + affine_part) / c_bar
    uncapped = F * (1.0 - 0.5 * b2 * c_bar)
    out = np.where(inf_mask, uncapped, out)
    # b2 == 0 leaves the integrand constant at min(F, r)
    out = np.where((b2 == 0.0) & ~inf_mask, np.minimum(F, r_fin), out)
    return out


def expected_inflow(
    spec: NetworkSpec,
    link_id: str,
    upstream_flow: float,
    x: tuple[float, float],
) -> float:
    """Scalar exact expected inflow at state x = (x_e1, x_e2)."""
    out = expected_inflow_grid(
        spec, link_id, upstream_flow, np.asarray([x[0]]), np.asarray([x[1]])
    )
    return float(out[0])


_LEGGAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b]."""
    if n not in _LEGGAUSS_CACHE:
        _LEGGAUSS_CACHE[n] = np.polynomial.legendre.leggauss(n)
    x, w = _LEGGAUSS_CACHE[n]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), w * half


def expected_inflow_quadrature(
    spec: NetworkSpec,
    link_id: str,
    upstream_flow: float,
    x: tuple[float, float],
    nodes: int = 64,
) -> float:
    """Gauss-Legendre estimate of the expected inflow.

    Independent cross-check for the exact closed form: the integrand
    min(share(c), r) has at most one kink, located here by bisection on
    the raw cap excess (no shared algebra with the closed-form kink), and
    each smooth piece gets its own rule.
    """
    c_bar = _require_uniform_compliance(spec)
    if c_bar == 0.0:
        return _inflow_at_c(spec, link_id, upstream_flow, x, np.asarray([0.0]))[0]

    def cap_excess(c: float) -> float:
        _, b2 = routing_fractions(spec.routing, x[0], x[1])
        share = b2 * c * upstream_flow if link_id == "e2" else (1.0 - b2 * c) * upstream_flow
        link = spec.links[link_id]
        if link.receiving.unbounded:
            return -1.0
        xe = x[0] if link_id == "e1" else x[1]
        return share - eval_flow(link.receiving, xe)

    edges = [0.0, c_bar]
    g0, g1 = cap_excess(0.0), cap_excess(c_bar)
    if (g0 > 0.0) != (g1 > 0.0) and g0 != 0.0 and g1 != 0.0:
        lo, hi = 0.0, c_bar
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if (cap_excess(mid) > 0.0) == (g0 > 0.0):
                lo = mid
            else:
                hi = mid
        edges = [0.0, 0.5 * (lo + hi), c_bar]

    per_piece = max(4, nodes // (len(edges) - 1))
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        cs, ws = gauss_legendre(per_piece, a, b)
        total += float(np.dot(ws, _inflow_at_c(spec, link_id, upstream_flow, x, cs)))
    return total / c_bar


def _inflow_at_c(spec, link_id, upstream_flow, x, cs: np.ndarray) -> np.ndarray:
    _, b2 = routing_fractions(spec.routing, x[0], x[1])
    link = spec.links[link_id]
    if link_id == "e2":
        share = b2 * cs * upstream_flow
    else:
        share = (1.0 - b2 * cs) * upstream_flow
    if link.receiving.unbounded:
        return share
    xe = x[0] if link_id == "e1" else x[1]
    return np.minimum(share, eval_flow(link.receiving, xe))


def refine_expected_inflow(
    spec: NetworkSpec,
    link_id: str,
    upstream_flow: float,
    x: tuple[float, float],
    nodes: int = 64,
    tol: float = 1e-10,
    max_doublings: int = 5,
) -> float:
    """Quadrature with panel doubling until successive estimates agree."""
    est = expected_inflow_quadrature(spec, link_id, upstream_flow, x, nodes)
    for _ in range(max_doublings):
        nodes *= 2
        nxt = expected_inflow_quadrature(spec, link_id, upstream_flow, x, nodes)
        if abs(nxt - est) < tol:
            return nxt
        est = nxt
    return est
