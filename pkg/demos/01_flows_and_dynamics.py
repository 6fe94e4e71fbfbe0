"""Walk through the building blocks: flow profiles, routing, one-step updates.

Produces demos/output/01_profiles.png and a printed tour of the exact
one-step maps for both network variants.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from twolink import (
    NetworkState,
    capacity,
    compromised_fractions,
    eval_flow,
    preset,
    routing_fractions,
    step_finite,
    step_infinite,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = preset("paper-finite")
spec = cfg.network_spec()

print("== link flow functions ==")
for lid in ("e0", "e1", "e2"):
    link = spec.links[lid]
    print(f"{lid}: capacity {capacity(link):.3f}, jam density {link.jam_density}")

xs = np.linspace(0.0, 2.6, 400)
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
for lid, color in (("e1", "tab:blue"), ("e2", "tab:orange")):
    link = spec.links[lid]
    ax1.plot(xs, eval_flow(link.sending, xs), color=color, label=f"{lid} sending")
    ax2.plot(xs, eval_flow(link.receiving, xs), color=color, label=f"{lid} receiving")
ax1.set_xlabel("density")
ax1.set_ylabel("flow")
ax1.legend()
ax2.set_xlabel("density")
ax2.legend()
fig.tight_layout()
fig.savefig(OUT / "01_profiles.png", dpi=150)
print(f"wrote {OUT / '01_profiles.png'}")

print("\n== routing and compliance ==")
for x in ((0.0, 0.0), (0.5, 0.2), (1.5, 0.2)):
    b1, b2 = routing_fractions(spec.routing, *x)
    print(f"x = {x}: advised split beta = ({b1:.4f}, {b2:.4f})")
b1, b2 = routing_fractions(spec.routing, 0.5, 0.2)
for c in (1.0, 0.5, 0.0):
    bt1, bt2 = compromised_fractions(b1, b2, c)
    print(f"compliance {c:.1f}: effective split = ({bt1:.4f}, {bt2:.4f})")

print("\n== one exact step, no spillback ==")
inf_spec = preset("paper-infinite").network_spec()
state = NetworkState((0.5, 0.2))
nxt = step_infinite(inf_spec, state, d=1.0, c=0.5)
print(f"x = {state.x} --(d=1.0, c=0.5)--> {tuple(round(v, 6) for v in nxt.x)}")

print("\n== one exact step with the upstream buffer ==")
state = NetworkState((1.0, 0.5, 0.2))
nxt = step_finite(spec, state, d=1.0, c=0.5)
print(f"x = {state.x} --(d=1.0, c=0.5)--> {tuple(round(v, 6) for v in nxt.x)}")
state = NetworkState((1.0, 2.4, 0.2))
nxt = step_finite(spec, state, d=1.0, c=0.5)
print(f"jammed e1 blocks its inflow: x1 {state.x[1]} -> {nxt.x[1]:.4f} (discharge only)")
