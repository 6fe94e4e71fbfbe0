"""Exact throughput of the no-spillback network as compliance varies.

The stability test is exact for this variant, so bisection on the mean
demand gives the true throughput.  The curve shows the two headline
effects: zero compliance pins throughput at the major-link capacity, and
gains saturate once the mean compliance clears ~0.4.

Produces demos/output/02_throughput.png.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from twolink import preset, thm1_search, thm1_throughput

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = preset("paper-infinite")

print("== one certificate in detail ==")
spec = cfg.network_spec(c_bar=0.79)
cert = thm1_search(spec, alpha=0.95)
print(f"alpha = 0.95, c_bar = 0.79: verdict {cert.verdict}, "
      f"witness theta = {tuple(round(t, 3) for t in cert.witness.as_tuple())}, "
      f"slack = {cert.margin:.4f}")
cert = thm1_search(spec, alpha=1.05)
print(f"alpha = 1.05 (> Q_e1 + Q_e2): verdict {cert.verdict}")

print("\n== throughput curve ==")
c_grid = np.linspace(0.0, 1.0, 11)
thr = []
for cb in c_grid:
    value = thm1_throughput(cfg.network_spec(c_bar=float(cb)))
    thr.append(value)
    print(f"c_bar = {cb:.1f} (mean compliance {cb / 2:.2f}): throughput = {value:.4f}")

fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(c_grid / 2, thr, "o-")
ax.axhline(0.6, ls=":", color="gray", label="major-link capacity")
ax.axhline(1.0, ls="--", color="gray", label="total capacity")
ax.set_xlabel("mean compliance rate")
ax.set_ylabel("throughput (mean demand)")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "02_throughput.png", dpi=150)
print(f"\nwrote {OUT / '02_throughput.png'}")
