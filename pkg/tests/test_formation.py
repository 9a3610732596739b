import numpy as np
import pytest

from quadswarm.formation import (
    BearingSpec,
    BearingSpecError,
    DegenerateBearingError,
    NeighborState,
    bearing_control_input,
    formation_error,
    grid_formation_spec,
    projection_matrix,
)
from quadswarm.netsim import TopologyGraph


def ns(pos, vel=(0, 0, 0)):
    return NeighborState(np.array(pos, dtype=float), np.array(vel, dtype=float))


def square_spec():
    targets = {
        0: np.array([0.0, 0.0, 1.0]),
        1: np.array([1.0, 0.0, 1.0]),
        2: np.array([1.0, 1.0, 1.0]),
        3: np.array([0.0, 1.0, 1.0]),
    }
    cycle = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (3, 0), (0, 3)]
    edges = cycle + [(2, 0), (3, 1)]
    return targets, BearingSpec.from_targets(targets, edges, {0, 1})


class TestProjectionMatrix:
    def test_vertical_axis(self):
        assert np.allclose(projection_matrix([0, 0, 1]), np.diag([1.0, 1.0, 0.0]))

    def test_diagonal_direction(self):
        p = projection_matrix(np.array([1.0, 1.0, 0.0]) / np.sqrt(2))
        expected = np.array([[0.5, -0.5, 0], [-0.5, 0.5, 0], [0, 0, 1.0]])
        assert np.allclose(p, expected, atol=1e-12)

    def test_random_unit_eigenstructure(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            g = rng.normal(size=3)
            g = g / np.linalg.norm(g)
            p = projection_matrix(g)
            assert np.allclose(p, p.T, atol=1e-12)
            assert np.max(np.abs(p @ p - p)) < 1e-12
            assert np.max(np.abs(p @ g)) < 1e-12
            eig = np.sort(np.linalg.eigvalsh(p))
            assert np.allclose(eig, [0.0, 1.0, 1.0], atol=1e-10)

    def test_renormalizes_near_unit_input(self):
        p = projection_matrix(np.array([0.0, 0.0, 1.0 + 5e-7]))
        assert np.allclose(p, np.diag([1.0, 1.0, 0.0]), atol=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateBearingError):
            projection_matrix([0.0, 0.0, 0.0])


class TestBearingControlInput:
    def spec_one_edge(self):
        return BearingSpec({(0, 1): np.array([1.0, 0.0, 0.0])}, leaders=set())

    def test_satisfied_bearing_zero_input(self):
        spec = self.spec_one_edge()
        u = bearing_control_input(ns([0, 0, 1]), {1: ns([1, 0, 1])}, spec, 0, kp=1.0, kv=0.0)
        assert np.allclose(u, 0.0, atol=1e-15)

    def test_offset_neighbor_direct_matrix_oracle(self):
        spec = self.spec_one_edge()
        u = bearing_control_input(ns([0, 0, 1]), {1: ns([1, 1, 1])}, spec, 0, kp=1.0, kv=0.0)
        p = projection_matrix([1.0, 0.0, 0.0])
        expected = -p @ (np.array([0.0, 0.0, 1.0]) - np.array([1.0, 1.0, 1.0]))
        assert np.allclose(u, expected, atol=1e-14)
        assert np.allclose(u, [0.0, 1.0, 0.0], atol=1e-14)

    def test_leader_zero(self):
        spec = BearingSpec({(0, 1): np.array([1.0, 0, 0])}, leaders={0})
        u = bearing_control_input(ns([5, 5, 5]), {1: ns([-3, 2, 9], [1, 1, 1])}, spec, 0)
        assert np.array_equal(u, np.zeros(3))

    def test_velocity_term(self):
        spec = self.spec_one_edge()
        u = bearing_control_input(
            ns([0, 0, 1], [0, 0.5, 0]), {1: ns([1, 0, 1])}, spec, 0, kp=1.0, kv=2.0
        )
        assert np.allclose(u, [0.0, -1.0, 0.0], atol=1e-14)

    def test_missing_neighbors_skipped(self):
        _, spec = square_spec()
        u_full = bearing_control_input(
            ns([1.3, 0.9, 1.0]), {0: ns([0, 0, 1]), 1: ns([1, 0, 1]), 3: ns([0, 1, 1])},
            spec, 2, kp=1.0, kv=0.0,
        )
        u_part = bearing_control_input(
            ns([1.3, 0.9, 1.0]), {0: ns([0, 0, 1])}, spec, 2, kp=1.0, kv=0.0
        )
        assert not np.allclose(u_full, u_part)  # fewer terms, different input

    def test_unknown_neighbor_raises(self):
        spec = self.spec_one_edge()
        with pytest.raises(BearingSpecError):
            bearing_control_input(ns([0, 0, 0]), {7: ns([1, 1, 1])}, spec, 0)

    def test_translation_invariance(self):
        _, spec = square_spec()
        rng = np.random.default_rng(3)
        for _ in range(50):
            shift = rng.normal(size=3)
            me = ns(rng.normal(size=3), rng.normal(size=3))
            nbrs = {0: ns(rng.normal(size=3), rng.normal(size=3)),
                    1: ns(rng.normal(size=3), rng.normal(size=3))}
            base = bearing_control_input(me, nbrs, spec, 2)
            moved = bearing_control_input(
                ns(me.position + shift, me.velocity),
                {j: ns(s.position + shift, s.velocity) for j, s in nbrs.items()},
                spec, 2,
            )
            # identity is algebraic; evaluation rounds at the last ulp
            assert np.allclose(base, moved, atol=1e-12)


class TestFormationError:
    def test_exact_formation_zero(self):
        targets, spec = square_spec()
        err = formation_error([targets[i] for i in range(4)], spec)
        assert err < 1e-12

    def test_scaled_formation_zero(self):
        targets, spec = square_spec()
        centroid = np.mean([targets[i] for i in range(4)], axis=0)
        scaled = [centroid + 2.0 * (targets[i] - centroid) for i in range(4)]
        assert formation_error(scaled, spec) < 1e-12

    def test_perturbed_positive(self):
        targets, spec = square_spec()
        positions = [targets[i].copy() for i in range(4)]
        positions[2] += np.array([0.2, -0.1, 0.05])
        assert formation_error(positions, spec) > 1e-4

    def test_coincident_edge_warns_and_excludes(self):
        spec = BearingSpec({(0, 1): np.array([1.0, 0, 0]), (1, 0): np.array([-1.0, 0, 0])},
                           leaders=set())
        with pytest.warns(UserWarning):
            err = formation_error([np.zeros(3), np.zeros(3)], spec)
        assert err == 0.0


class TestGridFormationSpec:
    def test_1x2_grid(self):
        spec = grid_formation_spec(1, 2, 1.0, leaders={0})
        assert np.allclose(spec.bearings[(0, 1)], [1, 0, 0])
        assert np.allclose(spec.bearings[(1, 0)], [-1, 0, 0])

    def test_2x2_axis_aligned_cycle(self):
        spec = grid_formation_spec(2, 2, 0.5, leaders={0})
        # 4-cycle: leader 0 observes no diagonal, all grid bearings axis-aligned
        assert (0, 3) not in spec.bearings
        assert np.allclose(spec.bearings[(0, 1)], [1, 0, 0])
        assert np.allclose(spec.bearings[(0, 2)], [0, 1, 0])
        assert np.allclose(spec.bearings[(3, 2)], [-1, 0, 0])
        assert np.allclose(spec.bearings[(3, 1)], [0, -1, 0])

    def test_5x6_self_consistent(self):
        spec = grid_formation_spec(5, 6, 0.4, leaders={0, 5})
        positions = []
        for i in range(30):
            r, c = divmod(i, 6)
            positions.append(np.array([c * 0.4, r * 0.4, 0.0]))
        assert formation_error(positions, spec) < 1e-12

    def test_followers_observe_all_leaders(self):
        spec = grid_formation_spec(3, 3, 1.0, leaders={0, 8})
        for i in range(1, 8):
            assert (i, 0) in spec.bearings
            assert (i, 8) in spec.bearings

    def test_invalid_dimensions(self):
        with pytest.raises(ValueError):
            grid_formation_spec(1, 1, 1.0, leaders={0})
        with pytest.raises(ValueError):
            grid_formation_spec(2, 2, 1.0, leaders=set())


class TestClosedLoop:
    def simulate(self, spec, targets, start, kp=1.2, kv=1.8, seconds=30.0,
                 drop=None, seed=0):
        """Double-integrator rollout; returns error trace sampled at 1 Hz."""
        rng = np.random.default_rng(seed)
        n = len(start)
        p = np.array([s.copy() for s in start])
        v = np.zeros((n, 3))
        dt = 0.01
        trace = []
        for k in range(int(seconds / dt) + 1):
            if k % 100 == 0:
                trace.append(formation_error(list(p), spec))
            u = np.zeros((n, 3))
            for i in range(n):
                if i in spec.leaders:
                    continue
                nbrs = {}
                for j in spec.in_neighbors(i):
                    if drop is not None and rng.random() < drop:
                        continue  # lost message this round: skip neighbor
                    nbrs[j] = NeighborState(p[j], v[j])
                u[i] = bearing_control_input(NeighborState(p[i], v[i]), nbrs, spec, i,
                                             kp=kp, kv=kv)
            p = p + v * dt + 0.5 * u * dt * dt
            v = v + u * dt
        return np.array(trace), p

    def test_ideal_network_convergence(self):
        targets, spec = square_spec()
        start = [targets[0], targets[1],
                 np.array([1.7, 0.3, 1.4]), np.array([-0.5, 1.8, 0.6])]
        trace, final_p = self.simulate(spec, targets, start, seconds=30.0)
        assert trace[-1] < 1e-4
        # after the 2 s transient the error decays: the underdamped wiggles
        # ride a strictly shrinking envelope (checked with a 6 s lag), and
        # nothing ever climbs back above the transient-end level
        for i in range(2, len(trace) - 6):
            if trace[i] >= 1e-8:
                assert trace[i + 6] < trace[i]
        assert np.max(trace[3:]) < trace[2]
        # leaders did not move
        assert np.linalg.norm(final_p[0] - targets[0]) < 1e-12
        assert np.linalg.norm(final_p[1] - targets[1]) < 1e-12

    def test_lossy_network_convergence(self):
        targets, spec = square_spec()
        start = [targets[0], targets[1],
                 np.array([1.7, 0.3, 1.4]), np.array([-0.5, 1.8, 0.6])]
        trace, _ = self.simulate(spec, targets, start, seconds=60.0, drop=0.2, seed=7)
        assert trace[-1] < 1e-2


class TestSpecValidation:
    def test_non_unit_bearing_rejected(self):
        with pytest.raises(ValueError):
            BearingSpec({(0, 1): np.array([1.0, 1.0, 0.0])}, leaders=set())

    def test_coincident_targets_rejected(self):
        with pytest.raises(DegenerateBearingError):
            BearingSpec.from_targets(
                {0: np.zeros(3), 1: np.zeros(3)}, [(0, 1)], leaders=set()
            )

    def test_check_against_graph(self):
        _, spec = square_spec()
        good = TopologyGraph.from_edges(
            4, [(j, i) for (i, j) in spec.bearings.keys()]
        )
        spec.check_against_graph(good)
        bad = TopologyGraph.from_edges(4, [(0, 1)])
        with pytest.raises(BearingSpecError):
            spec.check_against_graph(bad)
