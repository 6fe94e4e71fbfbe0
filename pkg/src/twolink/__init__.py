"""Two parallel traffic links under stochastic demand and driver compliance.

A numpy/scipy library for (i) exact one-step dynamics of the two network
variants (infinite buffers; finite buffers behind an upstream link),
(ii) analytic stability certificates via Foster-Lyapunov-style drain
conditions and discretized semi-infinite programs, (iii) exact or bounded
throughput, and (iv) seeded Monte Carlo simulation with a reproducible
stability classifier.  A thin CLI (``twolink``) drives parameter sweeps
and writes plot-ready CSV files.
"""

__version__ = "0.1.0"

from .certify import (
    Certificate,
    CertificateContradictionError,
    FixedPointProbe,
    InvariantSet,
    LyapunovSpec,
    ThetaPoint,
    critical_density,
    drift,
    fixed_point_probe,
    invariant_set,
    lyapunov_value,
    sip_constraint_thm2,
    thm1_feasible,
    thm1_search,
    thm1_throughput,
    thm2_certify,
    thm3_certify,
    throughput_bounds,
)
from .cli import SweepResult, UsageError
from .config import ScenarioConfig, preset
from .network import (
    INFINITE_FLOW,
    VARIANT_FINITE,
    VARIANT_INFINITE,
    DensityBoundsError,
    FlowProfile,
    InfeasibleGeometryError,
    LinkSpec,
    LogitRouting,
    NetworkSpec,
    NetworkState,
    VariantMismatchError,
    capacity,
    compromised_fractions,
    eval_flow,
    link_inflow,
    routing_fractions,
    step_finite,
    step_infinite,
)
from .simulate import SimConfig, TrajectoryStats, classify_stability, empirical_drift, simulate
from .stochastic import (
    ComplianceModel,
    DemandModel,
    RngStream,
    expected_compliance,
    expected_inflow,
    expected_inflow_quadrature,
    sample_compliance,
    sample_demand,
)


__all__ = [
    "Certificate",
    "CertificateContradictionError",
    "ComplianceModel",
    "DemandModel",
    "DensityBoundsError",
    "FixedPointProbe",
    "FlowProfile",
    "INFINITE_FLOW",
    "InfeasibleGeometryError",
    "InvariantSet",
    "LinkSpec",
    "LogitRouting",
    "LyapunovSpec",
    "NetworkSpec",
    "NetworkState",
    "RngStream",
    "ScenarioConfig",
    "SimConfig",
    "SweepResult",
    "ThetaPoint",
    "TrajectoryStats",
    "UsageError",
    "VARIANT_FINITE",
    "VARIANT_INFINITE",
    "VariantMismatchError",
    "capacity",
    "classify_stability",
    "compromised_fractions",
    "critical_density",
    "drift",
    "empirical_drift",
    "eval_flow",
    "expected_compliance",
    "expected_inflow",
    "expected_inflow_quadrature",
    "fixed_point_probe",
    "invariant_set",
    "link_inflow",
    "lyapunov_value",
    "preset",
    "routing_fractions",
    "sample_compliance",
    "sample_demand",
    "simulate",
    "sip_constraint_thm2",
    "step_finite",
    "step_infinite",
    "thm1_feasible",
    "thm1_search",
    "thm1_throughput",
    "thm2_certify",
    "thm3_certify",
    "throughput_bounds",
]
