"""Command-line entry point.

Subcommands: ``certify``, ``sweep-region``, ``throughput-curve``,
``invariant-set``, ``simulate``.  A scenario comes from ``--preset`` or a
JSON ``--config`` file; outputs are UTF-8 CSV files with a header row plus
a JSON sidecar embedding the full configuration, the seed, and a config
hash, so every artifact is self-describing.  Identical configuration and
seed produce byte-identical files regardless of ``--workers`` (timings go
to stderr only).  Exit codes: 0 success, 1 computational failure, 2 usage
error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .certify import (
    Certificate,
    CertificateContradictionError,
    VariantMismatchError,
    invariant_set,
    thm1_search,
    thm1_throughput,
    thm2_certify,
    thm3_certify,
    throughput_bounds,
)
from .config import ScenarioConfig, preset
from .network import VARIANT_FINITE, VARIANT_INFINITE, NetworkState
from .simulate import classify_stability, simulate


class UsageError(ValueError):
    """Bad command/configuration combination; maps to exit code 2."""


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row.get(col)) for col in header])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def _write_sidecar(path: Path, cfg: ScenarioConfig, extra: Optional[dict] = None) -> None:
    cfg_json = cfg.to_json()
    doc = {
        "tool": "twolink",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_sha256": hashlib.sha256(cfg_json.encode("utf-8")).hexdigest(),
    }
    if extra:
        doc.update(extra)
    path.write_bytes((json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8"))


def _domain_for(cfg: ScenarioConfig, spec):
    if cfg.cert_option("domain") == "invariant_set":
        return invariant_set(spec, mode=cfg.cert_option("eq22a_mode"))
    return None


def _sip_kwargs(cfg: ScenarioConfig) -> dict:
    return {
        "strictness": cfg.cert_option("strictness"),
        "theta_grid_n": cfg.cert_option("theta_grid_n"),
        "x_grid_n": cfg.cert_option("x_grid_n"),
        "x_grid_max": cfg.cert_option("x_grid_max"),
    }


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------

def cmd_certify(cfg: ScenarioConfig, mode: str, out_dir: Optional[Path] = None) -> Certificate:
    spec = cfg.network_spec()
    alpha = spec.demand.mean
    if mode == "thm1":
        if cfg.variant != VARIANT_INFINITE:
            raise UsageError("mode thm1 requires the infinite_buffer variant")
        cert = thm1_search(
            spec, alpha,
            strictness=cfg.cert_option("strictness"),
            theta_cap=cfg.cert_option("theta_cap"),
            grid_n=cfg.cert_option("theta_grid_n"),
        )
    elif mode in ("thm2", "thm3"):
        if cfg.variant != VARIANT_FINITE:
            raise UsageError(f"mode {mode} requires the finite_buffer_with_upstream variant")
        fn = thm2_certify if mode == "thm2" else thm3_certify
        cert = fn(spec, alpha, domain=_domain_for(cfg, spec), **_sip_kwargs(cfg))
    else:
        raise UsageError(f"unknown certify mode {mode!r}")
    print(f"{mode}: verdict={cert.verdict} gamma={cert.margin:.6g} "
          f"theta={cert.witness.as_tuple() if cert.witness else None}")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"certificate_{mode}.json"
        path.write_bytes((cert.to_json(indent=2) + "\n").encode("utf-8"))
        _write_sidecar(out_dir / f"certificate_{mode}.config.json", cfg)
    return cert


# ---------------------------------------------------------------------------
# sweep-region
# ---------------------------------------------------------------------------

SWEEP_HEADER = [
    "d_lo", "c_bar", "alpha", "verdict_cert", "verdict_sim",
    "time_avg_x_e0", "time_avg_x_e1", "time_avg_x_e2", "gamma_or_slack", "error",
]


@dataclass
class SweepResult:
    """One row per (d_lo, c_bar) grid point, plus run metadata.

    Per-point runtimes stay in memory (and on stderr); the CSV and sidecar
    must be byte-identical across reruns and worker counts, so they carry
    no timing data.
    """

    rows: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]


def _sweep_point(args) -> dict:
    cfg, d_lo, c_bar, index = args
    t0 = time.perf_counter()
    row = {"d_lo": d_lo, "c_bar": c_bar, "alpha": 0.5 * (d_lo + cfg.demand_hi)}
    try:
        spec = cfg.network_spec(d_lo=d_lo, c_bar=c_bar)
        alpha = spec.demand.mean
        if cfg.variant == VARIANT_INFINITE:
            cert = thm1_search(
                spec, alpha,
                strictness=cfg.cert_option("strictness"),
                theta_cap=cfg.cert_option("theta_cap"),
                grid_n=cfg.cert_option("theta_grid_n"),
            )
            gamma = -cert.margin if cert.verdict == "unstable" else cert.margin
        else:
            cert = thm2_certify(spec, alpha, domain=_domain_for(cfg, spec), **_sip_kwargs(cfg))
            if cert.verdict != "stable":
                cert3 = thm3_certify(spec, alpha, domain=_domain_for(cfg, spec), **_sip_kwargs(cfg))
                if cert3.verdict == "unstable":
                    cert = cert3
            gamma = cert.margin
        row["verdict_cert"] = cert.verdict
        row["gamma_or_slack"] = float(gamma)

        init = NetworkState((0.0,) * (2 if cfg.variant == VARIANT_INFINITE else 3))
        sim_cfg = cfg.sim_config(stream_id=index)
        stats = simulate(spec, init, sim_cfg)
        row["verdict_sim"] = classify_stability(stats, sim_cfg)
        avg = stats.time_avg_density
        if cfg.variant == VARIANT_INFINITE:
            row["time_avg_x_e1"], row["time_avg_x_e2"] = avg
        else:
            row["time_avg_x_e0"], row["time_avg_x_e1"], row["time_avg_x_e2"] = avg
        row["error"] = ""
    except Exception as exc:  # per-point failures stay in-row; the sweep continues
        row.setdefault("verdict_cert", "error")
        row["verdict_sim"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["runtime_ms"] = (time.perf_counter() - t0) * 1e3
    return row


def cmd_sweep_region(cfg: ScenarioConfig, out_dir: Path, workers: int = 1) -> SweepResult:
    if not cfg.d_lo_grid or not cfg.c_bar_grid:
        raise UsageError("sweep-region needs nonempty d_lo_grid and c_bar_grid")
    tasks = []
    index = 0
    for d_lo in cfg.d_lo_grid:
        for c_bar in cfg.c_bar_grid:
            tasks.append((cfg, d_lo, c_bar, index))
            index += 1
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, tasks, chunksize=1))
    else:
        rows = [_sweep_point(t) for t in tasks]
    elapsed = time.perf_counter() - start
    print(f"sweep-region: {len(rows)} points in {elapsed:.1f}s", file=sys.stderr)
    out_dir.mkdir(parents=True, exist_ok=True)
    # runtime_ms is not in SWEEP_HEADER: timing must not break byte-identity
    _write_csv(out_dir / "sweep_region.csv", SWEEP_HEADER, rows)
    _write_sidecar(out_dir / "sweep_region.config.json", cfg)
    cfg_json = cfg.to_json()
    return SweepResult(rows=rows, metadata={
        "tool": "twolink",
        "version": __version__,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(cfg_json.encode("utf-8")).hexdigest(),
    })


# ---------------------------------------------------------------------------
# throughput-curve
# ---------------------------------------------------------------------------

CURVE_HEADER = ["c_bar", "expected_compliance", "throughput_lo", "throughput_hi"]


def _curve_point(args) -> dict:
    cfg, c_bar = args
    spec = cfg.network_spec(c_bar=c_bar)
    if cfg.variant == VARIANT_INFINITE:
        thr = thm1_throughput(
            spec,
            tol=cfg.cert_option("thm1_bisect_tol"),
            strictness=cfg.cert_option("strictness"),
            theta_cap=cfg.cert_option("theta_cap"),
            grid_n=cfg.cert_option("theta_grid_n"),
        )
        lo = hi = thr
    else:
        lo, hi = throughput_bounds(
            spec,
            tol=cfg.cert_option("bounds_bisect_tol"),
            domain_mode=cfg.cert_option("domain"),
            eq22a_mode=cfg.cert_option("eq22a_mode"),
            **_sip_kwargs(cfg),
        )
    return {
        "c_bar": c_bar,
        "expected_compliance": 0.5 * c_bar,
        "throughput_lo": float(lo),
        "throughput_hi": float(hi),
    }


def cmd_throughput_curve(cfg: ScenarioConfig, out_dir: Path, workers: int = 1) -> list[dict]:
    if not cfg.c_bar_grid:
        raise UsageError("throughput-curve needs a nonempty c_bar_grid")
    tasks = [(cfg, c_bar) for c_bar in cfg.c_bar_grid]
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_curve_point, tasks, chunksize=1))
    else:
        rows = [_curve_point(t) for t in tasks]
    elapsed = time.perf_counter() - start
    print(f"throughput-curve: {len(rows)} points in {elapsed:.1f}s", file=sys.stderr)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "throughput_curve.csv", CURVE_HEADER, rows)
    _write_sidecar(out_dir / "throughput_curve.config.json", cfg)
    return rows


# ---------------------------------------------------------------------------
# invariant-set
# ---------------------------------------------------------------------------

def _containment_check(cfg: ScenarioConfig, spec, inv, trajectories: int = 20,
                       steps: int = 2000) -> dict:
    """Seeded spot check that in-box starts stay in the box."""
    import numpy as np

    from .network import step_finite
    from .stochastic import RngStream

    rng = np.random.default_rng(cfg.seed)
    stayed = 0
    for i in range(trajectories):
        state = NetworkState((
            float(rng.uniform(inv.x_e0_lo, inv.x_e0_lo + 2.0)),
            float(rng.uniform(inv.x_e1_lo, inv.x_e1_hi)),
            float(rng.uniform(0.0, inv.x_e2_hi)),
        ))
        draws = RngStream(cfg.seed, i).uniform_pairs(steps)
        inside = True
        for k in range(steps):
            d = float(spec.demand.lo + (spec.demand.hi - spec.demand.lo) * draws[k, 0])
            c = float(spec.compliance.c_bar * draws[k, 1])
            state = step_finite(spec, state, d, c)
            if not inv.contains(state.x, tol=1e-9):
                inside = False
                break
        stayed += inside
    return {"trajectories": trajectories, "steps": steps, "stayed_inside": stayed}


def cmd_invariant_set(cfg: ScenarioConfig, out_dir: Optional[Path] = None, compare: bool = False,
                      check: bool = False) -> dict:
    if cfg.variant != VARIANT_FINITE:
        raise UsageError("invariant-set requires the finite_buffer_with_upstream variant")
    spec = cfg.network_spec()
    modes = ("mass_balance", "literal") if compare else (cfg.cert_option("eq22a_mode"),)
    report = {}
    for mode in modes:
        inv = invariant_set(spec, mode=mode)
        report[mode] = {
            "x_e1_lo": inv.x_e1_lo,
            "x_e1_hi": inv.x_e1_hi,
            "x_e2_hi": inv.x_e2_hi,
            "x_e0_lo": inv.x_e0_lo,
        }
        print(f"invariant-set [{mode}]: x_e1 in [{inv.x_e1_lo:.9f}, {inv.x_e1_hi:.9f}], "
              f"x_e2 in [0, {inv.x_e2_hi:.9f}], x_e0 >= {inv.x_e0_lo:.9f}")
        if check:
            result = _containment_check(cfg, spec, inv)
            report[mode]["containment"] = result
            print(f"  containment check: {result['stayed_inside']}/{result['trajectories']} "
                  f"trajectories stayed inside over {result['steps']} steps")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "invariant_set.json").write_bytes(
            (json.dumps(report, sort_keys=True, indent=2) + "\n").encode("utf-8")
        )
        _write_sidecar(out_dir / "invariant_set.config.json", cfg)
    return report


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ScenarioConfig, out_dir: Path, dump_every: Optional[int] = None) -> dict:
    spec = cfg.network_spec()
    init = NetworkState((0.0,) * (2 if cfg.variant == VARIANT_INFINITE else 3))
    sim_cfg = cfg.sim_config(stream_id=0)
    stats = simulate(spec, init, sim_cfg, record_every=dump_every)
    verdict = classify_stability(stats, sim_cfg)
    doc = {
        "verdict_sim": verdict,
        "time_avg_density": list(stats.time_avg_density),
        "window_means": list(stats.window_means),
        "max_density": list(stats.max_density),
        "steps_executed": stats.steps_executed,
        "diverged": stats.diverged,
        "horizon": sim_cfg.horizon,
        "burn_in": sim_cfg.effective_burn_in,
        "thresholds": {
            "stable_slope_tol": sim_cfg.stable_slope_tol,
            "unstable_growth_tol": sim_cfg.unstable_growth_tol,
            "divergence_cutoff": sim_cfg.divergence_cutoff,
        },
    }
    print(f"simulate: verdict={verdict} steps={stats.steps_executed} "
          f"avg={tuple(round(v, 6) for v in stats.time_avg_density)}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trajectory_stats.json").write_bytes(
        (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")
    )
    if dump_every and stats.thinned:
        n = 2 if cfg.variant == VARIANT_INFINITE else 3
        header = ["step"] + [f"x_{lid}" for lid in (("e1", "e2") if n == 2 else ("e0", "e1", "e2"))]
        rows = [
            {"step": i * dump_every, **{header[j + 1]: v for j, v in enumerate(state)}}
            for i, state in enumerate(stats.thinned)
        ]
        _write_csv(out_dir / "trajectory_dump.csv", header, rows)
    _write_sidecar(out_dir / "trajectory_stats.config.json", cfg)
    return doc


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _load_config(args) -> ScenarioConfig:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        cfg = ScenarioConfig.from_json(Path(args.config).read_text())
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise UsageError("one of --config or --preset is required")
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "eq22a_mode", None):
        cfg.cert = {**cfg.cert, "eq22a_mode": args.eq22a_mode}
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a scenario JSON file")
    p.add_argument("--preset", help="built-in scenario: paper-infinite or paper-finite")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--eq22a-mode", choices=["literal", "mass_balance"], default=None,
                   help="which low-demand balance equation defines x_e1_lo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twolink",
        description="Stability certificates, throughput, and Monte Carlo sweeps "
                    "for a two-parallel-link traffic network",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="run one analytic certificate")
    _add_common(p)
    p.add_argument("--mode", choices=["thm1", "thm2", "thm3"], required=True)

    p = sub.add_parser("sweep-region", help="certify + simulate every (d_lo, c_bar) grid point")
    _add_common(p)

    p = sub.add_parser("throughput-curve", help="throughput (or bounds) per compliance level")
    _add_common(p)

    p = sub.add_parser("invariant-set", help="report the invariant state box")
    _add_common(p)
    p.add_argument("--compare", action="store_true", help="report both x_e1_lo equation modes")
    p.add_argument("--check", action="store_true",
                   help="also run a seeded containment spot check")

    p = sub.add_parser("simulate", help="run one seeded trajectory")
    _add_common(p)
    p.add_argument("--dump-every", type=int, default=None,
                   help="also dump every k-th state to CSV")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        cfg = _load_config(args)
        out_dir = Path(args.out)
        if args.command == "certify":
            cmd_certify(cfg, args.mode, out_dir)
        elif args.command == "sweep-region":
            cmd_sweep_region(cfg, out_dir, workers=args.workers)
        elif args.command == "throughput-curve":
            cmd_throughput_curve(cfg, out_dir, workers=args.workers)
        elif args.command == "invariant-set":
            cmd_invariant_set(cfg, out_dir, compare=args.compare, check=args.check)
        elif args.command == "simulate":
            cmd_simulate(cfg, out_dir, dump_every=args.dump_every)
        return 0
    except (UsageError, VariantMismatchError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # computational failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
