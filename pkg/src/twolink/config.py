"""Scenario configuration: JSON schema, presets, and spec builders.

One JSON document drives every command.  Units: densities are veh/length,
flows veh/time, ``dt`` in time units, link ``length`` in length units, so
``v_free`` and ``w_back`` are flow-per-density slopes.  The two presets
reproduce the standard experimental setup on this network family:

* ``paper-infinite``: triangular sending flows (v, q) = (1, 0.6) and
  (0.8, 0.4), logit sensitivities (1, 2), uniform demand on [d_lo, 1.2],
  uniform compliance on [0, c_bar], dt = 0.1, unbounded receiving.
* ``paper-finite``: the same plus receiving flows r(x) = r_max - w_back*x
  with (1.2, 0.5) and (0.8, 0.4) (jam densities 2.4 and 2.0) and an
  upstream link with (v, q) = (1, 1).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .network import (
    VARIANT_FINITE,
    VARIANT_INFINITE,
    FlowProfile,
    LinkSpec,
    LogitRouting,
    NetworkSpec,
)
from .simulate import SimConfig
from .stochastic import ComplianceModel, DemandModel

DEFAULT_CERT = {
    "strictness": 1e-6,
    "theta_grid_n": 17,
    "theta_cap": None,
    "x_grid_n": 65,
    "x_grid_max": 513,
    "domain": "full_box",           # or "invariant_set"
    "eq22a_mode": "mass_balance",   # or "literal"
    "thm1_bisect_tol": 5e-4,
    "bounds_bisect_tol": 1e-3,
}

DEFAULT_SIM = {
    "horizon": 500_000,
    "burn_in": None,
    "divergence_cutoff": 1e6,
    "window_count": 10,
    "stable_slope_tol": 0.01,
    "unstable_growth_tol": 0.2,
}


@dataclass
class ScenarioConfig:
    """Everything a command needs: the network, the sweep axes, and knobs."""

    variant: str
    dt: float
    links: dict[str, dict[str, float]]
    nu_e1: float
    nu_e2: float
    demand_lo: float
    demand_hi: float
    c_bar: float
    d_lo_grid: list[float] = field(default_factory=list)
    c_bar_grid: list[float] = field(default_factory=list)
    sim: dict = field(default_factory=dict)
    cert: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for name, grid in (("d_lo_grid", self.d_lo_grid), ("c_bar_grid", self.c_bar_grid)):
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be strictly ascending")
        unknown = set(self.cert) - set(DEFAULT_CERT)
        if unknown:
            raise ValueError(f"unknown cert options: {sorted(unknown)}")
        unknown = set(self.sim) - set(DEFAULT_SIM)
        if unknown:
            raise ValueError(f"unknown sim options: {sorted(unknown)}")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    # -- builders -----------------------------------------------------------

    def cert_option(self, key: str):
        return self.cert.get(key, DEFAULT_CERT[key])

    def _link(self, lid: str) -> LinkSpec:
        p = self.links[lid]
        sending = FlowProfile.sending_triangular(p["v_free"], p["q_cap"])
        if "r_max" in p:
            receiving = FlowProfile.receiving_linear(p["r_max"], p["w_back"])
            jam = p["r_max"] / p["w_back"]
        else:
            receiving = FlowProfile.receiving_unbounded()
            jam = None
        return LinkSpec(lid, sending, receiving, length=p.get("length", 1.0), jam_density=jam)

    def network_spec(self, d_lo: float | None = None, c_bar: float | None = None) -> NetworkSpec:
        """Build the NetworkSpec, optionally overriding the sweep axes."""
        lids = ("e1", "e2") if self.variant == VARIANT_INFINITE else ("e0", "e1", "e2")
        links = {lid: self._link(lid) for lid in lids}
        return NetworkSpec(
            variant=self.variant,
            links=links,
            routing=LogitRouting(self.nu_e1, self.nu_e2),
            demand=DemandModel(self.demand_lo if d_lo is None else d_lo, self.demand_hi),
            compliance=ComplianceModel(self.c_bar if c_bar is None else c_bar),
            dt=self.dt,
        )

    def sim_config(self, stream_id: int = 0) -> SimConfig:
        opts = {**DEFAULT_SIM, **self.sim}
        return SimConfig(seed=self.seed, stream_id=stream_id, **opts)


def preset(name: str) -> ScenarioConfig:
    """Built-in scenario configurations; see the module docstring."""
    grid21 = [round(0.06 * i, 10) for i in range(21)]          # d_lo in [0, 1.2]
    cgrid21 = [round(0.05 * i, 10) for i in range(21)]         # c_bar in [0, 1]
    if name == "paper-infinite":
        return ScenarioConfig(
            variant=VARIANT_INFINITE,
            dt=0.1,
            links={
                "e1": {"length": 1.0, "v_free": 1.0, "q_cap": 0.6},
                "e2": {"length": 1.0, "v_free": 0.8, "q_cap": 0.4},
            },
            nu_e1=1.0,
            nu_e2=2.0,
            demand_lo=0.2,
            demand_hi=1.2,
            c_bar=0.79,
            d_lo_grid=grid21,
            c_bar_grid=cgrid21,
        )
    if name == "paper-finite":
        return ScenarioConfig(
            variant=VARIANT_FINITE,
            dt=0.1,
            links={
                "e0": {"length": 1.0, "v_free": 1.0, "q_cap": 1.0},
                "e1": {"length": 1.0, "v_free": 1.0, "q_cap": 0.6, "r_max": 1.2, "w_back": 0.5},
                "e2": {"length": 1.0, "v_free": 0.8, "q_cap": 0.4, "r_max": 0.8, "w_back": 0.4},
            },
            nu_e1=1.0,
            nu_e2=2.0,
            demand_lo=0.2,
            demand_hi=1.2,
            c_bar=0.8,
            d_lo_grid=grid21,
            c_bar_grid=cgrid21,
            cert={"domain": "invariant_set"},
        )
    raise ValueError(f"unknown preset {name!r}; available: paper-infinite, paper-finite")
