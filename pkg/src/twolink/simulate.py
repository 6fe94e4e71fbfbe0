"""Seeded Monte Carlo simulation of the two network Markov chains.

Trajectories iterate the exact one-step maps from :mod:`twolink.network`
with fresh uniform demand/compliance draws each step, accumulate running
statistics without storing the path, and classify long-run stability from
the slope of block-averaged density norms.  A divergence cutoff turns
runaway trajectories into an early "unstable" verdict long before float
overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .certify import LyapunovSpec, lyapunov_value
from .network import (
    VARIANT_FINITE,
    VARIANT_INFINITE,
    DensityBoundsError,
    NetworkSpec,
    NetworkState,
    eval_flow,
    routing_fractions,
)
from .stochastic import RngStream

_CHUNK = 16384


def _scalar_flow_fn(profile):
    """Hot-path closure over python floats, bit-identical to ``eval_flow``.

    The trajectory loop evaluates flow profiles millions of times; numpy
    scalar indexing is too slow there.  The closure reproduces the scalar
    ``eval_flow`` arithmetic operation for operation (IEEE-identical), and
    a unit test pins the two paths together.
    """
    if profile.unbounded:
        return lambda x: math.inf
    xs = [float(v) for v in profile._xs]
    fs = [float(v) for v in profile._fs]
    slopes = [float(v) for v in profile._slopes]
    sat = float(profile.saturation)
    sending = profile.kind == "sending"
    n = len(xs)
    if n == 1:
        const = fs[0]
        return lambda x: const
    last_x, last_f, last_sl = xs[-1], fs[-1], slopes[-1]

    def fn(x):
        if x > last_x:
            if sending:
                return sat
            v = last_f + last_sl * (x - last_x)
            return v if v > 0.0 else 0.0
        i = n - 2
        for j in range(n - 1):
            if x < xs[j + 1]:
                i = j
                break
        return fs[i] + slopes[i] * (x - xs[i])

    return fn


@dataclass(frozen=True)
class SimConfig:
    """Horizon, burn-in, divergence cutoff, and classifier thresholds.

    ``divergence_cutoff`` applies to the 1-norm of the density vector and
    ends the run early with an unstable verdict; it sits far above any
    stable regime scale (jam densities are a few units) while preventing
    float overflow on genuinely divergent trajectories.
    """

    horizon: int = 500_000
    burn_in: Optional[int] = None          # defaults to 10% of the horizon
    divergence_cutoff: float = 1e6
    window_count: int = 10
    seed: int = 0
    stream_id: int = 0
    stable_slope_tol: float = 0.01
    unstable_growth_tol: float = 0.2

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        burn = self.effective_burn_in
        if not (0 <= burn < self.horizon):
            raise ValueError("need horizon > burn_in >= 0")
        if self.window_count < 2:
            raise ValueError("window_count must be at least 2")
        if self.horizon - burn < self.window_count:
            raise ValueError("too few post-burn-in steps for the requested windows")

    @property
    def effective_burn_in(self) -> int:
        return self.horizon // 10 if self.burn_in is None else self.burn_in


@dataclass(frozen=True)
class TrajectoryStats:
    """Running statistics of one simulated trajectory."""

    time_avg_density: tuple[float, ...]
    window_means: tuple[float, ...]
    max_density: tuple[float, ...]
    steps_executed: int
    diverged: bool
    thinned: Optional[tuple[tuple[float, ...], ...]] = None


def simulate(
    spec: NetworkSpec,
    init: NetworkState,
    cfg: SimConfig,
    record_every: Optional[int] = None,
) -> TrajectoryStats:
    """Run one seeded trajectory and return its running statistics.

    The update arithmetic mirrors ``step_infinite``/``step_finite``
    bit-exactly (same calls, same operation order); a unit test pins the
    two paths together.  Draws come in fixed-size blocks from one Philox
    stream, so results are independent of the chunking.
    """
    finite = spec.variant == VARIANT_FINITE
    n_links = 3 if finite else 2
    if len(init.x) != n_links:
        raise ValueError(f"initial state must hold {n_links} densities for {spec.variant!r}")

    routing = spec.routing
    send1 = spec.links["e1"].sending
    send2 = spec.links["e2"].sending
    s1 = spec.scale("e1")
    s2 = spec.scale("e2")
    if finite:
        send0 = spec.links["e0"].sending
        recv1 = spec.links["e1"].receiving
        recv2 = spec.links["e2"].receiving
        jam1 = spec.links["e1"].jam_density
        jam2 = spec.links["e2"].jam_density
        s0 = spec.scale("e0")

    d_lo, d_hi = spec.demand.lo, spec.demand.hi
    d_span = d_hi - d_lo
    c_bar = spec.compliance.c_bar

    burn = cfg.effective_burn_in
    n_eff = cfg.horizon - burn
    wsize = n_eff // cfg.window_count
    cutoff = cfg.divergence_cutoff

    rng = RngStream(cfg.seed, cfg.stream_id)
    sums = [0.0] * n_links
    maxes = list(init.x)
    win_sums = [0.0] * cfg.window_count
    win_counts = [0] * cfg.window_count
    thinned = [] if record_every else None

    f1 = _scalar_flow_fn(send1)
    f2 = _scalar_flow_fn(send2)
    if finite:
        f0 = _scalar_flow_fn(send0)
        r1 = _scalar_flow_fn(recv1)
        r2 = _scalar_flow_fn(recv2)
    nu1, nu2 = routing.nu_e1, routing.nu_e2
    exp = math.exp
    last_w = cfg.window_count - 1

    if finite:
        x0, x1, x2 = init.x
    else:
        x1, x2 = init.x
        x0 = 0.0
    t = 0
    diverged = False
    while t < cfg.horizon and not diverged:
        block = rng.uniform_pairs(min(_CHUNK, cfg.horizon - t)).tolist()
        for u_d, u_c in block:
            d = d_lo + d_span * u_d
            c = c_bar * u_c
            # logit split, bit-identical to routing_fractions on scalars
            z = nu1 * x1 - nu2 * x2
            if z >= 0:
                ez = exp(-z)
                b1 = ez / (1.0 + ez)
            else:
                b1 = 1.0 / (1.0 + exp(z))
            bt2 = (1.0 - b1) * c
            bt1 = 1.0 - bt2
            if finite:
                upstream = f0(x0)
                q1 = min(bt1 * upstream, r1(x1))
                q2 = min(bt2 * upstream, r2(x2))
                nx0 = x0 + s0 * (d - q1 - q2)
                nx1 = x1 + s1 * (q1 - f1(x1))
                nx2 = x2 + s2 * (q2 - f2(x2))
                if nx0 < -1e-12 or nx1 < -1e-12 or nx1 > jam1 + 1e-12 or nx2 < -1e-12 or nx2 > jam2 + 1e-12:
                    raise DensityBoundsError(f"density left its range at step {t}")
                x0 = nx0 if nx0 > 0.0 else 0.0
                x1 = min(max(nx1, 0.0), jam1)
                x2 = min(max(nx2, 0.0), jam2)
                if x0 > maxes[0]:
                    maxes[0] = x0
                if x1 > maxes[1]:
                    maxes[1] = x1
                if x2 > maxes[2]:
                    maxes[2] = x2
                norm = x0 + x1 + x2
            else:
                nx1 = x1 + s1 * (bt1 * d - f1(x1))
                nx2 = x2 + s2 * (bt2 * d - f2(x2))
                if nx1 < -1e-12 or nx2 < -1e-12:
                    raise DensityBoundsError(f"density went negative at step {t}")
                x1 = nx1 if nx1 > 0.0 else 0.0
                x2 = nx2 if nx2 > 0.0 else 0.0
                if x1 > maxes[0]:
                    maxes[0] = x1
                if x2 > maxes[1]:
                    maxes[1] = x2
                norm = x1 + x2

            if t >= burn:
                if finite:
                    sums[0] += x0
                    sums[1] += x1
                    sums[2] += x2
                else:
                    sums[0] += x1
                    sums[1] += x2
                w = (t - burn) // wsize
                if w > last_w:
                    w = last_w
                win_sums[w] += norm
                win_counts[w] += 1
            if thinned is not None and t % record_every == 0:
                thinned.append((x0, x1, x2) if finite else (x1, x2))
            t += 1
            if norm > cutoff:
                diverged = True
                break

    post = t - burn if t > burn else 0
    if post > 0:
        avg = tuple(s / post for s in sums)
    else:
        avg = (x0, x1, x2) if finite else (x1, x2)
    windows = tuple(s / n for s, n in zip(win_sums, win_counts) if n > 0)
    return TrajectoryStats(
        time_avg_density=avg,
        window_means=windows,
        max_density=tuple(maxes),
        steps_executed=t,
        diverged=diverged,
        thinned=tuple(thinned) if thinned is not None else None,
    )


def classify_stability(stats: TrajectoryStats, cfg: SimConfig) -> str:
    """Stable / unstable / inconclusive from the window means.

    Divergence is unstable outright.  Otherwise the relative change of the
    block means over the last half of the run decides: at or below the
    stable threshold (decay included) the trajectory has plateaued;
    strictly monotone growth beyond the growth threshold is unstable;
    anything in between stays inconclusive.
    """
    if stats.diverged:
        return "unstable"
    w = stats.window_means
    if len(w) < 2:
        return "inconclusive"
    half = w[len(w) // 2:]
    if len(half) < 2:
        half = w[-2:]
    scale = max(sum(abs(v) for v in half) / len(half), 1e-12)
    rel = (half[-1] - half[0]) / scale
    if rel <= cfg.stable_slope_tol:
        return "stable"
    if all(b > a for a, b in zip(half, half[1:])) and rel >= cfg.unstable_growth_tol:
        return "unstable"
    return "inconclusive"


def empirical_drift(
    spec: NetworkSpec,
    lyap: LyapunovSpec,
    x: tuple[float, ...],
    samples: int,
    rng: RngStream,
) -> tuple[float, float]:
    """Monte Carlo one-step drift estimate: (mean, standard error).

    Vectorized over the sample axis; used to validate the quadrature drift.
    """
    if samples < 1000:
        raise ValueError("use at least 1000 samples for a meaningful standard error")
    if lyap.variant != spec.variant:
        raise ValueError(f"Lyapunov family {lyap.family!r} applies to {lyap.variant!r}")
    u = rng.uniform_pairs(samples)
    d = spec.demand.lo + (spec.demand.hi - spec.demand.lo) * u[:, 0]
    c = spec.compliance.c_bar * u[:, 1]

    if spec.variant == VARIANT_INFINITE:
        x1, x2 = x
        _, b2 = routing_fractions(spec.routing, x1, x2)
        f1 = eval_flow(spec.links["e1"].sending, x1)
        f2 = eval_flow(spec.links["e2"].sending, x2)
        bt2 = b2 * c
        nx1 = x1 + spec.scale("e1") * ((1.0 - bt2) * d - f1)
        nx2 = x2 + spec.scale("e2") * (bt2 * d - f2)
        values = lyapunov_value(lyap, (nx1, nx2))
    else:
        x0, x1, x2 = x
        upstream = eval_flow(spec.links["e0"].sending, x0)
        _, b2 = routing_fractions(spec.routing, x1, x2)
        bt2 = b2 * c
        q1 = np.minimum((1.0 - bt2) * upstream, eval_flow(spec.links["e1"].receiving, x1))
        q2 = np.minimum(bt2 * upstream, eval_flow(spec.links["e2"].receiving, x2))
        nx0 = x0 + spec.scale("e0") * (d - q1 - q2)
        nx1 = x1 + spec.scale("e1") * (q1 - eval_flow(spec.links["e1"].sending, x1))
        nx2 = x2 + spec.scale("e2") * (q2 - eval_flow(spec.links["e2"].sending, x2))
        values = lyapunov_value(lyap, (nx0, nx1, nx2))

    deltas = values - float(lyapunov_value(lyap, x))
    mean = float(np.mean(deltas))
    stderr = float(np.std(deltas, ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return mean, stderr
