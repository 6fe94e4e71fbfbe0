"""Stability regions over the (demand floor, compliance cap) plane.

Certifies and simulates every grid point for both variants (a coarse grid
and short horizon keep this demo around a minute; the CLI runs the full
version).  The two panels show the certified verdicts; the spillback
variant's stable region visibly shrinks and an inconclusive band separates
the certified-stable and certified-unstable regions.

Produces demos/output/04_regions.png and CSV files via the sweep command.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from twolink import preset
from twolink.cli import cmd_sweep_region

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

COLORS = {"stable": "tab:green", "unstable": "tab:red", "inconclusive": "tab:gray"}

fig, axes = plt.subplots(1, 2, figsize=(9, 3.8), sharey=True)
for ax, name in zip(axes, ("paper-infinite", "paper-finite")):
    cfg = preset(name)
    cfg.d_lo_grid = [round(0.15 * i, 10) for i in range(9)]   # 9 x 9 grid
    cfg.c_bar_grid = [round(0.125 * i, 10) for i in range(9)]
    cfg.sim = {"horizon": 50_000, "window_count": 10}
    cfg.seed = 7
    rows = cmd_sweep_region(cfg, OUT / name.replace("-", "_"))
    agree = sum(
        1 for r in rows
        if r["verdict_sim"] in ("stable", "unstable") and r["verdict_cert"] == r["verdict_sim"]
    )
    decisive = sum(1 for r in rows if r["verdict_sim"] in ("stable", "unstable")
                   and r["verdict_cert"] in ("stable", "unstable"))
    print(f"{name}: certificate/simulation agreement on {agree}/{decisive} decisive points")
    for r in rows:
        ax.scatter(r["alpha"], r["c_bar"] / 2, c=COLORS[r["verdict_cert"]], s=46, marker="s")
    ax.set_title(name)
    ax.set_xlabel("mean demand")
axes[0].set_ylabel("mean compliance")
handles = [plt.Line2D([], [], marker="s", ls="", color=c, label=v) for v, c in COLORS.items()]
axes[1].legend(handles=handles, loc="lower right", fontsize=8)
fig.tight_layout()
fig.savefig(OUT / "04_regions.png", dpi=150)
print(f"wrote {OUT / '04_regions.png'}")
