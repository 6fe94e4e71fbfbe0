"""Certificates for the spillback network: invariant set, the two
semi-infinite programs, and the throughput bounds they imply.

With finite buffers the stability test is only one-sided, so the analysis
yields a certified-stable lower bound and a certified-unstable upper
bound on throughput, with an honest gap between them.  The invariant box
tightens the programs without losing generality: trajectories enter it
and never leave.

Produces demos/output/03_bounds.png.
"""

import dataclasses
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from twolink import (
    DemandModel,
    NetworkState,
    RngStream,
    invariant_set,
    preset,
    step_finite,
    thm2_certify,
    thm3_certify,
    throughput_bounds,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = preset("paper-finite")
spec = cfg.network_spec()  # d_lo = 0.2 (alpha = 0.7), c_bar = 0.8

print("== invariant state box ==")
inv = invariant_set(spec)
print(f"x_e1 in [{inv.x_e1_lo:.6f}, {inv.x_e1_hi:.6f}], "
      f"x_e2 in [0, {inv.x_e2_hi:.6f}], x_e0 >= {inv.x_e0_lo}")

print("\na random trajectory enters the box and stays:")
state = NetworkState((2.5, 2.2, 1.8))
rng = RngStream(3, 0)
entered_at = None
for t in range(5000):
    u = rng.random(2)
    d = spec.demand.lo + (spec.demand.hi - spec.demand.lo) * float(u[0])
    c = spec.compliance.c_bar * float(u[1])
    state = step_finite(spec, state, d, c)
    if entered_at is None and inv.contains(state.x):
        entered_at = t
print(f"entered after {entered_at} steps; inside at step 5000: {inv.contains(state.x)}")

print("\n== certificates at a few demand levels ==")
for alpha in (0.7, 0.85, 1.1):
    sp = dataclasses.replace(spec, demand=DemandModel(max(0.0, 2 * alpha - 1.2), 1.2))
    dom = invariant_set(sp)
    s = thm2_certify(sp, alpha, domain=dom)
    u = thm3_certify(sp, alpha, domain=dom)
    print(f"alpha = {alpha}: stability program -> {s.verdict} (gamma {s.margin:+.4f}), "
          f"instability program -> {u.verdict} (gamma {u.margin:+.4f})")

print("\n== throughput bounds over compliance ==")
c_grid = np.linspace(0.0, 1.0, 6)
los, his = [], []
for cb in c_grid:
    lo, hi = throughput_bounds(cfg.network_spec(c_bar=float(cb)), domain_mode="invariant_set")
    los.append(lo)
    his.append(hi)
    print(f"c_bar = {cb:.1f}: certified stable up to {lo:.4f}, "
          f"certified unstable from {hi:.4f} (gap {hi - lo:.4f})")

fig, ax = plt.subplots(figsize=(5, 3.5))
ax.fill_between(c_grid / 2, los, his, alpha=0.3, label="certification gap")
ax.plot(c_grid / 2, los, "o-", label="lower bound (stable)")
ax.plot(c_grid / 2, his, "s-", label="upper bound (unstable)")
ax.set_xlabel("mean compliance rate")
ax.set_ylabel("throughput bounds")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "03_bounds.png", dpi=150)
print(f"\nwrote {OUT / '03_bounds.png'}")
