"""Tests for flow profiles, routing splits, and the one-step dynamics."""

import math

import numpy as np
import pytest
from conftest import finite_spec, infinite_spec

from twolink import (
    INFINITE_FLOW,
    DensityBoundsError,
    FlowProfile,
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


def grid_capacity_oracle(link, hi, n=24001):
    """Brute-force sup of min(sending, receiving) on a dense density grid."""
    xs = np.linspace(0.0, hi, n)
    f = eval_flow(link.sending, xs)
    r = eval_flow(link.receiving, xs)
    return float(np.max(np.minimum(f, r)))


class TestFlowProfiles:
    def test_sending_examples(self):
        f = FlowProfile.sending_triangular(1.0, 0.6)
        assert eval_flow(f, 0.3) == pytest.approx(0.3, abs=1e-15)
        assert eval_flow(f, 0.0) == 0.0
        assert eval_flow(f, 5.0) == 0.6  # saturation beyond the last breakpoint

    def test_receiving_zero_at_jam(self):
        r = FlowProfile.receiving_linear(1.2, 0.5)
        assert eval_flow(r, 2.4) == pytest.approx(0.0, abs=1e-15)
        assert eval_flow(r, 3.0) == 0.0  # last slope continues, floored at zero
        assert eval_flow(r, 0.0) == 1.2

    def test_negative_density_rejected(self):
        f = FlowProfile.sending_triangular(1.0, 0.6)
        with pytest.raises(ValueError):
            eval_flow(f, -0.1)
        with pytest.raises(ValueError):
            eval_flow(f, np.array([0.1, -0.1]))

    def test_scalar_and_array_paths_agree(self):
        rng = np.random.default_rng(7)
        profiles = [
            FlowProfile.sending_triangular(0.8, 0.4),
            FlowProfile.receiving_linear(0.8, 0.4),
            FlowProfile("sending", ((0.0, 0.0), (0.5, 0.3), (1.0, 0.5)), 0.5),
        ]
        xs = rng.uniform(0.0, 4.0, size=200)
        for prof in profiles:
            vec = eval_flow(prof, xs)
            for xi, vi in zip(xs, vec):
                assert eval_flow(prof, float(xi)) == vi

    def test_unbounded_receiving(self):
        r = FlowProfile.receiving_unbounded()
        assert eval_flow(r, 3.0) == INFINITE_FLOW
        assert np.all(np.isinf(eval_flow(r, np.array([0.0, 1.0]))))

    def test_validation(self):
        with pytest.raises(ValueError):
            FlowProfile("sending", ((0.0, 0.1), (1.0, 0.5)), 0.5)  # f(0) != 0
        with pytest.raises(ValueError):
            FlowProfile("sending", ((0.0, 0.0), (1.0, 0.5), (0.5, 0.6)), 0.6)
        with pytest.raises(ValueError):
            FlowProfile("sending", ((0.0, 0.0), (1.0, 0.5)), 0.4)  # exceeds saturation
        with pytest.raises(ValueError):
            FlowProfile("receiving", ((0.0, 0.5), (1.0, 0.8)), 0.8)  # increasing
        with pytest.raises(ValueError):
            FlowProfile("sending", (), 0.5, unbounded=True)


class TestCapacity:
    def test_paper_links(self):
        e1 = LinkSpec("e1", FlowProfile.sending_triangular(1.0, 0.6),
                      FlowProfile.receiving_linear(1.2, 0.5), jam_density=2.4)
        e2 = LinkSpec("e2", FlowProfile.sending_triangular(0.8, 0.4),
                      FlowProfile.receiving_linear(0.8, 0.4), jam_density=2.0)
        e0 = LinkSpec("e0", FlowProfile.sending_triangular(1.0, 1.0),
                      FlowProfile.receiving_unbounded())
        # dense grids hit the crossings exactly for these parameter values
        assert capacity(e1) == pytest.approx(grid_capacity_oracle(e1, 2.4), abs=1e-12)
        assert capacity(e2) == pytest.approx(grid_capacity_oracle(e2, 2.0), abs=1e-12)
        assert capacity(e1) == pytest.approx(0.6, abs=1e-12)
        assert capacity(e2) == pytest.approx(0.4, abs=1e-12)
        assert capacity(e0) == pytest.approx(1.0, abs=1e-12)

    def test_random_profiles_bracketed_by_grid(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.uniform(0.3, 2.0)
            q = rng.uniform(0.2, 1.5)
            r_max = rng.uniform(0.3, 2.5)
            w = rng.uniform(0.2, 1.5)
            link = LinkSpec("e1", FlowProfile.sending_triangular(v, q),
                            FlowProfile.receiving_linear(r_max, w), jam_density=r_max / w)
            hi = max(q / v, r_max / w) * 1.5
            n = 20001
            grid = grid_capacity_oracle(link, hi, n)
            cap = capacity(link)
            slope = max(v, w)
            assert grid - 1e-12 <= cap <= grid + slope * hi / (n - 1) + 1e-12


class TestRoutingFractions:
    def test_symmetry_at_origin(self):
        b1, b2 = routing_fractions(LogitRouting(1.0, 2.0), 0.0, 0.0)
        assert b1 == 0.5 and b2 == 0.5

    def test_against_direct_formula(self):
        routing = LogitRouting(1.0, 2.0)
        for x1, x2, expect in [(1.0, 0.0, (0.26894, 0.73106)), (0.3, 0.3, (0.57444, 0.42556))]:
            b1, b2 = routing_fractions(routing, x1, x2)
            num1, num2 = math.exp(-1.0 * x1), math.exp(-2.0 * x2)
            assert b1 == pytest.approx(num1 / (num1 + num2), rel=1e-12)
            assert b1 == pytest.approx(expect[0], abs=1e-5)
            assert b2 == pytest.approx(expect[1], abs=1e-5)

    def test_sum_is_exactly_one(self):
        rng = np.random.default_rng(3)
        routing = LogitRouting(1.0, 2.0)
        for _ in range(200):
            b1, b2 = routing_fractions(routing, rng.uniform(0, 10), rng.uniform(0, 10))
            assert b1 + b2 == 1.0

    def test_monotonicity_signs(self):
        # beta_e1 falls with its own density and rises with the other's
        routing = LogitRouting(1.0, 2.0)
        xs = np.linspace(0.0, 3.0, 31)
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        b1, b2 = routing_fractions(routing, X1, X2)
        assert np.all(np.diff(b1, axis=0) <= 1e-15)
        assert np.all(np.diff(b1, axis=1) >= -1e-15)
        assert np.all(np.diff(b2, axis=0) >= -1e-15)
        assert np.all(np.diff(b2, axis=1) <= 1e-15)

    def test_extreme_densities(self):
        b1, b2 = routing_fractions(LogitRouting(1.0, 2.0), 1e6, 0.0)
        assert 0.0 <= b1 <= 1e-10 and b1 + b2 == 1.0
        b1, b2 = routing_fractions(LogitRouting(1.0, 2.0), 0.0, 1e6)
        assert b1 == pytest.approx(1.0)


class TestCompromisedFractions:
    def test_full_compliance_is_identity(self):
        bt1, bt2 = compromised_fractions(0.5, 0.5, 1.0)
        assert (bt1, bt2) == (0.5, 0.5)

    def test_zero_compliance_sends_all_to_major(self):
        assert compromised_fractions(0.5, 0.5, 0.0) == (1.0, 0.0)

    def test_partial(self):
        bt1, bt2 = compromised_fractions(0.5, 0.5, 0.4)
        assert bt1 == pytest.approx(0.8, abs=1e-15)
        assert bt2 == pytest.approx(0.2, abs=1e-15)

    def test_sum_is_exactly_one(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            b1 = rng.uniform(0, 1)
            bt1, bt2 = compromised_fractions(b1, 1.0 - b1, rng.uniform(0, 1))
            assert bt1 + bt2 == 1.0


class TestLinkInflow:
    def test_receiving_binds(self):
        assert link_inflow(0.2, 1.0, 0.04) == 0.04

    def test_infinite_receiving_never_binds(self):
        assert link_inflow(0.2, 1.0, INFINITE_FLOW) == pytest.approx(0.2)

    def test_zero_share(self):
        assert link_inflow(0.0, 5.0, 0.3) == 0.0


def oracle_step_infinite(x1, x2, d, c, nu=(1.0, 2.0), v=(1.0, 0.8), q=(0.6, 0.4), scale=0.1):
    """Independent re-derivation of one infinite-buffer step in plain math."""
    e1, e2 = math.exp(-nu[0] * x1), math.exp(-nu[1] * x2)
    b2 = e2 / (e1 + e2)
    bt2 = b2 * c
    bt1 = 1.0 - bt2
    f1 = min(v[0] * x1, q[0])
    f2 = min(v[1] * x2, q[1])
    return x1 + scale * (bt1 * d - f1), x2 + scale * (bt2 * d - f2)


class TestStepInfinite:
    def test_worked_example(self):
        spec = infinite_spec()
        out = step_infinite(spec, NetworkState((0.5, 0.2)), 1.0, 0.5)
        ox1, ox2 = oracle_step_infinite(0.5, 0.2, 1.0, 0.5)
        assert out.x[0] == pytest.approx(ox1, abs=1e-12)
        assert out.x[1] == pytest.approx(ox2, abs=1e-12)
        assert out.x[0] == pytest.approx(0.52375, abs=1e-5)
        assert out.x[1] == pytest.approx(0.21025, abs=1e-5)
        assert out.last_demand == 1.0 and out.last_compliance == 0.5

    def test_empty_network_is_fixed(self):
        spec = infinite_spec()
        for c in (0.0, 0.3, 1.0):
            out = step_infinite(spec, NetworkState((0.0, 0.0)), 0.0, c)
            assert out.x == (0.0, 0.0)

    def test_zero_compliance_starves_minor_link(self):
        spec = infinite_spec()
        out = step_infinite(spec, NetworkState((0.5, 0.2)), 1.0, 0.0)
        assert out.x[1] == pytest.approx(0.2 - 0.1 * 0.16, abs=1e-12)

    def test_wrong_variant(self):
        with pytest.raises(VariantMismatchError):
            step_infinite(finite_spec(), NetworkState((0.0, 0.0, 0.0)), 0.5, 0.5)

    def test_conservation(self):
        # dx1*l1/dt + dx2*l2/dt == d - f1 - f2 when receiving never binds
        spec = infinite_spec()
        rng = np.random.default_rng(17)
        for _ in range(200):
            x1, x2 = rng.uniform(0, 3, size=2)
            d, c = rng.uniform(0, 1.2), rng.uniform(0, 1)
            out = step_infinite(spec, NetworkState((x1, x2)), d, c)
            lhs = (out.x[0] - x1) / spec.scale("e1") + (out.x[1] - x2) / spec.scale("e2")
            rhs = d - eval_flow(spec.links["e1"].sending, x1) - eval_flow(spec.links["e2"].sending, x2)
            assert lhs == pytest.approx(rhs, abs=1e-12)


class TestStepFinite:
    def test_empty_network_accumulates_upstream_only(self):
        spec = finite_spec()
        out = step_finite(spec, NetworkState((0.0, 0.0, 0.0)), 0.5, 0.7)
        assert out.x[0] == pytest.approx(0.05, abs=1e-15)
        assert out.x[1] == 0.0 and out.x[2] == 0.0

    def test_jammed_link_blocks_inflow(self):
        spec = finite_spec()
        out = step_finite(spec, NetworkState((1.0, 2.4, 0.0)), 1.0, 0.5)
        # r_e1(jam) = 0, so e1 only discharges: 2.4 - 0.1*f1(2.4)
        assert out.x[1] == pytest.approx(2.4 - 0.1 * 0.6, abs=1e-12)

    def test_worked_example(self):
        spec = finite_spec()
        x0, x1, x2 = 1.0, 0.5, 0.2
        d, c = 1.0, 0.5
        out = step_finite(spec, NetworkState((x0, x1, x2)), d, c)
        # independent arithmetic: F = f_e0(1.0) = 1.0, receiving wide open here
        e1w, e2w = math.exp(-x1), math.exp(-2 * x2)
        b2 = e2w / (e1w + e2w)
        bt2 = b2 * c
        q1 = min((1 - bt2) * 1.0, 1.2 - 0.5 * x1)
        q2 = min(bt2 * 1.0, 0.8 - 0.4 * x2)
        assert out.x[0] == pytest.approx(x0 + 0.1 * (d - q1 - q2), abs=1e-12)
        assert out.x[1] == pytest.approx(x1 + 0.1 * (q1 - 0.5), abs=1e-12)
        assert out.x[2] == pytest.approx(x2 + 0.1 * (q2 - 0.16), abs=1e-12)

    def test_conservation_including_upstream(self):
        spec = finite_spec()
        rng = np.random.default_rng(23)
        for _ in range(200):
            x0 = rng.uniform(0, 4)
            x1 = rng.uniform(0, 2.4)
            x2 = rng.uniform(0, 2.0)
            d, c = rng.uniform(0, 1.2), rng.uniform(0, 1)
            out = step_finite(spec, NetworkState((x0, x1, x2)), d, c)
            lhs = sum((out.x[i] - (x0, x1, x2)[i]) / spec.scale(l)
                      for i, l in enumerate(("e0", "e1", "e2")))
            rhs = d - eval_flow(spec.links["e1"].sending, x1) - eval_flow(spec.links["e2"].sending, x2)
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_jam_bounds_preserved(self):
        spec = finite_spec(c_bar=1.0)
        rng = np.random.default_rng(29)
        for _ in range(300):
            state = NetworkState((rng.uniform(0, 6), rng.uniform(0, 2.4), rng.uniform(0, 2.0)))
            out = step_finite(spec, state, rng.uniform(0, 1.2), rng.uniform(0, 1))
            assert 0.0 <= out.x[1] <= 2.4
            assert 0.0 <= out.x[2] <= 2.0
            assert out.x[0] >= 0.0

    def test_wrong_variant(self):
        with pytest.raises(VariantMismatchError):
            step_finite(infinite_spec(), NetworkState((0.0, 0.0)), 0.5, 0.5)


class TestNetworkSpecValidation:
    def test_finite_requires_upstream(self):
        spec = finite_spec()
        links = {k: v for k, v in spec.links.items() if k != "e0"}
        with pytest.raises(ValueError, match="requires link"):
            NetworkSpec("finite_buffer_with_upstream", links, spec.routing,
                        spec.demand, spec.compliance, spec.dt)

    def test_upstream_capacity_ordering(self):
        spec = finite_spec()
        weak_e0 = LinkSpec("e0", FlowProfile.sending_triangular(1.0, 0.5),
                           FlowProfile.receiving_unbounded())
        links = dict(spec.links, e0=weak_e0)
        with pytest.raises(ValueError, match="capacity"):
            NetworkSpec(spec.variant, links, spec.routing, spec.demand, spec.compliance, spec.dt)

    def test_well_posedness_rejects_large_dt(self):
        spec = infinite_spec()
        with pytest.raises(ValueError, match="well-posedness"):
            NetworkSpec(spec.variant, spec.links, spec.routing,
                        spec.demand, spec.compliance, dt=1.5)

    def test_infinite_variant_needs_unbounded_receiving(self):
        spec = infinite_spec()
        bounded = LinkSpec("e1", spec.links["e1"].sending,
                           FlowProfile.receiving_linear(1.2, 0.5), jam_density=2.4)
        links = dict(spec.links, e1=bounded)
        with pytest.raises(ValueError, match="unbounded"):
            NetworkSpec(spec.variant, links, spec.routing, spec.demand, spec.compliance, spec.dt)

    def test_negative_density_state_rejected(self):
        with pytest.raises(ValueError):
            NetworkState((-0.1, 0.0))
