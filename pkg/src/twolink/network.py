"""Deterministic building blocks for a two-parallel-link traffic network.

Links carry piecewise-linear sending flows (desired outflow, nondecreasing,
zero at zero density, saturating at a finite capacity) and receiving flows
(maximum accepted inflow, nonincreasing, zero at jam density), in the style
of first-order link-transmission models.  On top of the flow functions sit
a logit routing split between the major link ``e1`` and the minor link
``e2``, the compliance-compromised split (drivers advised onto ``e2`` only
follow the advice with probability ``c``), and the exact one-step density
updates for the two network variants:

* ``infinite_buffer``     -- both parallel links accept any inflow,
* ``finite_buffer_with_upstream`` -- the parallel links have jam densities
  and are fed through an upstream link ``e0`` that stores blocked demand.

Everything here is a pure function of its inputs; all value types are
immutable and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .stochastic import ComplianceModel, DemandModel

INFINITE_FLOW = math.inf

VARIANT_INFINITE = "infinite_buffer"
VARIANT_FINITE = "finite_buffer_with_upstream"
VARIANTS = (VARIANT_INFINITE, VARIANT_FINITE)

LINK_IDS = ("e0", "e1", "e2")

ArrayLike = Union[float, np.ndarray]


class VariantMismatchError(ValueError):
    """An operation was applied to the wrong network variant."""


class DensityBoundsError(RuntimeError):
    """A one-step update produced a density outside its admissible range."""


class InfeasibleGeometryError(RuntimeError):
    """A root/crossing required by the flow geometry does not exist."""


# ---------------------------------------------------------------------------
# Flow profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowProfile:
    """Piecewise-linear sending or receiving flow function of density.

    ``breakpoints`` is an ordered tuple of ``(density, flow)`` pairs with
    strictly increasing densities.  Beyond the last breakpoint a sending
    profile stays at ``saturation`` and a receiving profile continues its
    last slope, floored at zero.  ``saturation`` is the supremum of the
    profile (the flow cap for sending, the flow at zero density for
    receiving).  An unbounded receiving profile (infinite buffer) carries
    ``unbounded=True``, has no breakpoints, and evaluates to
    ``INFINITE_FLOW``; arithmetic paths are expected to short-circuit on it
    rather than multiply with infinities.
    """

    kind: str
    breakpoints: tuple[tuple[float, float], ...]
    saturation: float
    unbounded: bool = False

    def __post_init__(self):
        if self.kind not in ("sending", "receiving"):
            raise ValueError(f"unknown flow profile kind {self.kind!r}")
        if self.unbounded:
            if self.kind != "receiving":
                raise ValueError("only receiving flows may be unbounded")
            if self.breakpoints:
                raise ValueError("unbounded profile takes no breakpoints")
            object.__setattr__(self, "saturation", INFINITE_FLOW)
            return
        if not self.breakpoints:
            raise ValueError("bounded profile needs at least one breakpoint")
        xs = [bp[0] for bp in self.breakpoints]
        fs = [bp[1] for bp in self.breakpoints]
        if any(not math.isfinite(v) for v in xs + fs):
            raise ValueError("breakpoints must be finite")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("breakpoint densities must be strictly increasing")
        if xs[0] < 0:
            raise ValueError("densities must be nonnegative")
        if not math.isfinite(self.saturation):
            raise ValueError("saturation must be finite for bounded profiles")
        if self.kind == "sending":
            if xs[0] != 0.0 or fs[0] != 0.0:
                raise ValueError("sending flow must start at (0, 0)")
            if any(b < a for a, b in zip(fs, fs[1:])):
                raise ValueError("sending flow must be nondecreasing")
            if abs(fs[-1] - self.saturation) > 1e-12 or any(v > self.saturation + 1e-12 for v in fs):
                raise ValueError("sending flow must reach and not exceed its saturation")
        else:
            if any(b > a for a, b in zip(fs, fs[1:])):
                raise ValueError("receiving flow must be nonincreasing")
            if any(v < 0 for v in fs):
                raise ValueError("receiving flow must be nonnegative")
            if abs(max(fs) - self.saturation) > 1e-12:
                raise ValueError("receiving saturation must equal its maximum flow")
        # precomputed segment arrays shared by the scalar and vector paths
        object.__setattr__(self, "_xs", np.asarray(xs, dtype=float))
        object.__setattr__(self, "_fs", np.asarray(fs, dtype=float))
        slopes = [0.0] if len(xs) == 1 else [
            (fb - fa) / (xb - xa) for (xa, fa), (xb, fb) in zip(self.breakpoints, self.breakpoints[1:])
        ]
        object.__setattr__(self, "_slopes", np.asarray(slopes, dtype=float))

    # -- constructors for the standard shapes -----------------------------

    @classmethod
    def sending_triangular(cls, v: float, q: float) -> "FlowProfile":
        """min(v*x, q): free-flow speed ``v`` up to the capacity ``q``."""
        if v <= 0 or q <= 0:
            raise ValueError("v and q must be positive")
        return cls("sending", ((0.0, 0.0), (q / v, q)), q)

    @classmethod
    def receiving_linear(cls, r_max: float, w: float) -> "FlowProfile":
        """max(r_max - w*x, 0): full acceptance r_max, backward slope w."""
        if r_max <= 0 or w <= 0:
            raise ValueError("r_max and w must be positive")
        return cls("receiving", ((0.0, r_max), (r_max / w, 0.0)), r_max)

    @classmethod
    def receiving_unbounded(cls) -> "FlowProfile":
        return cls("receiving", (), INFINITE_FLOW, unbounded=True)

    # -- evaluation --------------------------------------------------------

    @property
    def saturation_density(self) -> float:
        """Smallest density at which the profile reaches its final value."""
        if self.unbounded:
            return 0.0
        return float(self._xs[-1])

    @property
    def max_slope(self) -> float:
        if self.unbounded:
            return 0.0
        return float(np.max(np.abs(self._slopes)))

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return eval_flow(self, x)


def eval_flow(profile: FlowProfile, x: ArrayLike) -> ArrayLike:
    """Evaluate a flow profile at density ``x`` (scalar or ndarray).

    Negative densities are a domain error.  Beyond the last breakpoint a
    sending profile returns its saturation and a receiving profile
    continues the last slope, floored at zero.
    """
    if isinstance(x, np.ndarray):
        if np.any(x < 0):
            raise ValueError("density must be nonnegative")
        if profile.unbounded:
            return np.full_like(x, INFINITE_FLOW, dtype=float)
        xs, fs, slopes = profile._xs, profile._fs, profile._slopes
        if len(xs) == 1:
            return np.full_like(x, fs[0], dtype=float)
        idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
        y = fs[idx] + slopes[idx] * (x - xs[idx])
        beyond = x > xs[-1]
        if np.any(beyond):
            if profile.kind == "sending":
                y = np.where(beyond, profile.saturation, y)
            else:
                tail = fs[-1] + slopes[-1] * (x - xs[-1])
                y = np.where(beyond, np.maximum(tail, 0.0), y)
        return y
    if x < 0:
        raise ValueError("density must be nonnegative")
    if profile.unbounded:
        return INFINITE_FLOW
    xs, fs, slopes = profile._xs, profile._fs, profile._slopes
    n = len(xs)
    if n == 1:
        return float(fs[0])
    if x > xs[-1]:
        if profile.kind == "sending":
            return float(profile.saturation)
        return max(float(fs[-1] + slopes[-1] * (x - xs[-1])), 0.0)
    i = n - 2
    for j in range(n - 1):
        if x < xs[j + 1]:
            i = j
            break
    return float(fs[i] + slopes[i] * (x - xs[i]))


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkSpec:
    """One directed link: its flow functions, length, and optional jam density."""

    link_id: str
    sending: FlowProfile
    receiving: FlowProfile
    length: float = 1.0
    jam_density: Optional[float] = None

    def __post_init__(self):
        if self.link_id not in LINK_IDS:
            raise ValueError(f"link_id must be one of {LINK_IDS}")
        if self.sending.kind != "sending" or self.receiving.kind != "receiving":
            raise ValueError("profile kinds do not match their roles")
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ValueError("length must be positive and finite")
        if self.jam_density is not None:
            if self.receiving.unbounded:
                raise ValueError("a jam density requires a bounded receiving flow")
            if abs(eval_flow(self.receiving, self.jam_density)) > 1e-12:
                raise ValueError("receiving flow must vanish at the jam density")


def _crossing_density(link: LinkSpec) -> Optional[float]:
    """Exact density where sending and receiving flows cross, if they do.

    ``sending - receiving`` is nondecreasing, so the first sign change over
    the merged breakpoint grid brackets the unique crossing; within a
    segment both profiles are affine and the crossing solves a linear
    equation exactly.
    """
    f, r = link.sending, link.receiving
    if r.unbounded:
        return None
    cands = {0.0}
    cands.update(float(v) for v in f._xs)
    cands.update(float(v) for v in r._xs)
    if len(r._xs) > 1 and r._slopes[-1] < 0 and r._fs[-1] > 0:
        cands.add(float(r._xs[-1] - r._fs[-1] / r._slopes[-1]))
    hi = max(cands) + 1.0
    cands.add(hi)
    xs = sorted(cands)
    ga = eval_flow(f, xs[0]) - eval_flow(r, xs[0])
    if ga >= 0:
        return xs[0]
    for a, b in zip(xs, xs[1:]):
        gb = eval_flow(f, b) - eval_flow(r, b)
        if gb >= 0:
            if gb == ga:
                return a
            t = -ga / (gb - ga)
            return a + t * (b - a)
        ga = gb
    return None


def capacity(link: LinkSpec) -> float:
    """sup over density of min(sending, receiving): the sustainable discharge.

    Exact for piecewise-linear profiles.  With an unbounded receiving flow
    this is just the sending saturation.
    """
    if link.receiving.unbounded:
        return float(link.sending.saturation)
    x_cross = _crossing_density(link)
    if x_cross is None:
        return float(link.sending.saturation)
    return float(min(eval_flow(link.sending, x_cross), eval_flow(link.receiving, x_cross)))


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogitRouting:
    """Logit split between the two parallel links.

    beta_e(x) = exp(-nu_e x_e) / (exp(-nu_e1 x_e1) + exp(-nu_e2 x_e2)).
    Nonnegative sensitivities make the split monotone: each link's share
    falls with its own density and rises with the other's.
    """

    nu_e1: float
    nu_e2: float

    def __post_init__(self):
        if self.nu_e1 < 0 or self.nu_e2 < 0:
            raise ValueError("logit sensitivities must be nonnegative")


def routing_fractions(routing: LogitRouting, x_e1: ArrayLike, x_e2: ArrayLike):
    """Return (beta_e1, beta_e2); the second is the exact complement of the first."""
    z = routing.nu_e1 * x_e1 - routing.nu_e2 * x_e2
    if isinstance(z, np.ndarray):
        b1 = np.empty_like(z, dtype=float)
        pos = z >= 0
        with np.errstate(over="ignore"):
            ez = np.exp(-np.abs(z))
        b1[pos] = ez[pos] / (1.0 + ez[pos])
        b1[~pos] = 1.0 / (1.0 + ez[~pos])
        return b1, 1.0 - b1
    if z >= 0:
        t = math.exp(-z)
        b1 = t / (1.0 + t)
    else:
        b1 = 1.0 / (1.0 + math.exp(z))
    return b1, 1.0 - b1


def compromised_fractions(beta_e1: ArrayLike, beta_e2: ArrayLike, c: ArrayLike):
    """Effective split after non-compliant minor-link drivers divert back.

    beta~_e2 = beta_e2 * c and beta~_e1 = 1 - beta~_e2, which equals
    beta_e1 + beta_e2*(1-c) and keeps the pair summing to one bit-exactly.
    Drivers routed to the major link are taken to comply fully.
    """
    bt2 = beta_e2 * c
    return 1.0 - bt2, bt2


def link_inflow(beta_tilde: float, upstream_flow: float, receiving_at_x: float) -> float:
    """min(share * upstream flow, receiving flow); infinite receiving never binds."""
    demand_share = beta_tilde * upstream_flow
    if receiving_at_x == INFINITE_FLOW:
        return demand_share
    return min(demand_share, receiving_at_x)


# ---------------------------------------------------------------------------
# Network specification and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkSpec:
    """Full scenario: links, routing, stochastic models, and time scaling.

    Validation enforces the structural requirements of each variant (which
    links exist, which receiving flows are bounded), the upstream capacity
    ordering ``Q_e0 >= Q_e1 + Q_e2`` for the finite variant, and the
    well-posedness condition ``dt * max_slope / length <= 1`` for every
    flow profile, which guarantees one-step updates can never leave the
    admissible density ranges.
    """

    variant: str
    links: dict[str, LinkSpec]
    routing: LogitRouting
    demand: "DemandModel"
    compliance: "ComplianceModel"
    dt: float
    _scales: dict[str, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        required = ("e1", "e2") if self.variant == VARIANT_INFINITE else ("e0", "e1", "e2")
        for lid in required:
            if lid not in self.links:
                raise ValueError(f"variant {self.variant!r} requires link {lid!r}")
            if self.links[lid].link_id != lid:
                raise ValueError(f"links[{lid!r}] has mismatched link_id")
        if self.variant == VARIANT_INFINITE:
            for lid in ("e1", "e2"):
                if not self.links[lid].receiving.unbounded:
                    raise ValueError("infinite_buffer variant requires unbounded receiving flows")
        else:
            if not self.links["e0"].receiving.unbounded:
                raise ValueError("upstream link e0 must have an unbounded receiving flow")
            for lid in ("e1", "e2"):
                link = self.links[lid]
                if link.receiving.unbounded or link.jam_density is None:
                    raise ValueError("finite variant requires bounded receiving flows with jam densities")
            q0 = capacity(self.links["e0"])
            if q0 < capacity(self.links["e1"]) + capacity(self.links["e2"]) - 1e-12:
                raise ValueError("upstream capacity must cover the parallel links")
        scales = {}
        for lid, link in self.links.items():
            scale = self.dt / link.length
            for prof in (link.sending, link.receiving):
                if not prof.unbounded and scale * prof.max_slope > 1.0 + 1e-12:
                    raise ValueError(
                        f"dt too large for link {lid!r}: dt*slope/length = "
                        f"{scale * prof.max_slope:.6g} > 1 violates well-posedness"
                    )
            scales[lid] = scale
        object.__setattr__(self, "_scales", scales)

    def scale(self, link_id: str) -> float:
        """Per-link update gain dt / length."""
        return self._scales[link_id]


@dataclass(frozen=True)
class NetworkState:
    """Density vector plus the draws that produced it.

    ``x`` is ``(x_e1, x_e2)`` for the infinite variant and
    ``(x_e0, x_e1, x_e2)`` for the finite one.
    """

    x: tuple[float, ...]
    last_demand: float = 0.0
    last_compliance: float = 0.0

    def __post_init__(self):
        if len(self.x) not in (2, 3):
            raise ValueError("state must hold two or three densities")
        if any(v < 0 for v in self.x):
            raise ValueError("densities must be nonnegative")


def _check_bounds(value: float, lo: float, hi: float, link_id: str, tol: float = 1e-12) -> float:
    if value < lo - tol or value > hi + tol:
        raise DensityBoundsError(
            f"link {link_id!r} density {value!r} left [{lo!r}, {hi!r}]; "
            "this indicates a mis-specified dt"
        )
    return min(max(value, lo), hi)


def step_infinite(spec: NetworkSpec, state: NetworkState, d: float, c: float) -> NetworkState:
    """One exact step of the infinite-buffer dynamics.

    x_e <- x_e + (dt/l_e) * (q_e_in - f_e(x_e)) with q_e_in = beta~_e * d,
    since unbounded receiving flows never bind.
    """
    if spec.variant != VARIANT_INFINITE:
        raise VariantMismatchError("step_infinite requires the infinite_buffer variant")
    x1, x2 = state.x
    b1, b2 = routing_fractions(spec.routing, x1, x2)
    bt1, bt2 = compromised_fractions(b1, b2, c)
    f1 = eval_flow(spec.links["e1"].sending, x1)
    f2 = eval_flow(spec.links["e2"].sending, x2)
    nx1 = x1 + spec.scale("e1") * (bt1 * d - f1)
    nx2 = x2 + spec.scale("e2") * (bt2 * d - f2)
    nx1 = _check_bounds(nx1, 0.0, math.inf, "e1")
    nx2 = _check_bounds(nx2, 0.0, math.inf, "e2")
    return NetworkState((nx1, nx2), d, c)


def step_finite(spec: NetworkSpec, state: NetworkState, d: float, c: float) -> NetworkState:
    """One exact step of the finite-buffer dynamics with upstream link e0.

    The split is fed by f_e0(x_e0); inflows are capped by the receiving
    flows; whatever the parallel links refuse stays on e0.  e0 itself is
    unbounded above.
    """
    if spec.variant != VARIANT_FINITE:
        raise VariantMismatchError("step_finite requires the finite_buffer_with_upstream variant")
    x0, x1, x2 = state.x
    upstream = eval_flow(spec.links["e0"].sending, x0)
    b1, b2 = routing_fractions(spec.routing, x1, x2)
    bt1, bt2 = compromised_fractions(b1, b2, c)
    q1 = link_inflow(bt1, upstream, eval_flow(spec.links["e1"].receiving, x1))
    q2 = link_inflow(bt2, upstream, eval_flow(spec.links["e2"].receiving, x2))
    f1 = eval_flow(spec.links["e1"].sending, x1)
    f2 = eval_flow(spec.links["e2"].sending, x2)
    nx0 = x0 + spec.scale("e0") * (d - q1 - q2)
    nx1 = x1 + spec.scale("e1") * (q1 - f1)
    nx2 = x2 + spec.scale("e2") * (q2 - f2)
    nx0 = _check_bounds(nx0, 0.0, math.inf, "e0")
    nx1 = _check_bounds(nx1, 0.0, spec.links["e1"].jam_density, "e1")
    nx2 = _check_bounds(nx2, 0.0, spec.links["e2"].jam_density, "e2")
    return NetworkState((nx0, nx1, nx2), d, c)
