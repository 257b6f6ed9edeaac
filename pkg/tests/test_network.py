import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from akooc.errors import (DimensionMismatch, IslandedBusDetected, NonConvergence,
                          ZeroImpedanceLine)
from akooc.network import (DER, LOAD, Boundary, Line, build_admittance, injections,
                           power_flow_jacobian, solve_power_flow)


def two_bus(x=0.1, r=0.0):
    return build_admittance([(0, 1, r, x)], 2, [DER, LOAD])


def random_network(rng, n_bus):
    """Spanning tree plus a few extra random lines with lossy impedances."""
    lines = []
    for b in range(1, n_bus):
        lines.append((int(rng.integers(0, b)), b, rng.uniform(0.005, 0.1), rng.uniform(0.02, 0.3)))
    for _ in range(int(rng.integers(0, n_bus))):
        i, j = rng.choice(n_bus, 2, replace=False)
        lines.append((int(i), int(j), rng.uniform(0.005, 0.1), rng.uniform(0.02, 0.3)))
    return build_admittance(lines, n_bus)


def fd_jacobian(V, theta, model, rel=1e-6):
    n = len(V)
    x0 = np.concatenate([theta, V])
    J = np.zeros((2 * n, 2 * n))
    for k in range(2 * n):
        h = rel * max(1.0, abs(x0[k]))
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        fp = np.concatenate(injections(xp[n:], xp[:n], model))
        fm = np.concatenate(injections(xm[n:], xm[:n], model))
        J[:, k] = (fp - fm) / (2 * h)
    return J


class TestAdmittance:
    def test_single_reactive_line(self):
        m = two_bus()
        np.testing.assert_allclose(m.B, [[-10, 10], [10, -10]], atol=1e-12)
        np.testing.assert_allclose(m.G, 0, atol=1e-12)

    def test_empty_lines(self):
        m = build_admittance([], 2)
        assert not m.G.any() and not m.B.any()
        with pytest.raises(IslandedBusDetected):
            build_admittance([], 2, [DER, LOAD])

    def test_out_of_service_equals_removed(self):
        lines = [(0, 1, 0.01, 0.1), (1, 2, 0.02, 0.2), (0, 2, 0.03, 0.15)]
        tripped = lines[:2] + [Line(0, 2, 0.03, 0.15, False)]
        a = build_admittance(tripped, 3)
        b = build_admittance(lines[:2], 3)
        np.testing.assert_array_equal(a.G, b.G)
        np.testing.assert_array_equal(a.B, b.B)

    def test_out_of_service_only_line(self):
        a = build_admittance([Line(0, 1, 0.0, 0.1, False)], 2)
        assert not a.B.any()

    def test_zero_impedance(self):
        with pytest.raises(ZeroImpedanceLine):
            build_admittance([(0, 1, 0.0, 0.0)], 2)

    def test_zero_impedance_ignored_when_out(self):
        build_admittance([Line(0, 1, 0.0, 0.0, False)], 2)

    def test_bad_index(self):
        with pytest.raises(IndexError):
            build_admittance([(0, 5, 0.0, 0.1)], 2)

    def test_role_length(self):
        with pytest.raises(DimensionMismatch):
            build_admittance([(0, 1, 0.0, 0.1)], 2, [DER])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 10_000))
    def test_symmetry_and_kirchhoff(self, n, seed):
        m = random_network(np.random.default_rng(seed), n)
        np.testing.assert_allclose(m.G, m.G.T, atol=1e-12)
        np.testing.assert_allclose(m.B, m.B.T, atol=1e-12)
        off = lambda M: M - np.diag(np.diag(M))
        np.testing.assert_allclose(np.diag(m.G), -off(m.G).sum(axis=1), atol=1e-9)
        np.testing.assert_allclose(np.diag(m.B), -off(m.B).sum(axis=1), atol=1e-9)

    def test_shunt_on_diagonal(self):
        m = build_admittance([(0, 1, 0.0, 0.1)], 2, shunts=[0.5 - 2j, 0])
        assert m.G[0, 0] == pytest.approx(0.5)
        assert m.B[0, 0] == pytest.approx(-12.0)


class TestInjections:
    def test_two_bus_values(self):
        P, Q = injections([1, 1], [0.1, 0], two_bus())
        assert P[0] == pytest.approx(0.99833416647, abs=1e-10)
        assert Q[0] == pytest.approx(10 - 10 * np.cos(0.1), abs=1e-12)
        assert Q[0] == pytest.approx(0.04996, abs=1e-5)

    def test_equal_angles_no_flow(self):
        P, _ = injections([1.0, 0.97], [0.3, 0.3], two_bus())
        np.testing.assert_allclose(P, 0, atol=1e-12)

    def test_zero_voltage_bus(self):
        P, Q = injections([0.0, 1.0], [0.4, -0.2], two_bus())
        assert P[0] == 0 and Q[0] == 0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            injections([1, 1, 1], [0, 0, 0], two_bus())

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 10_000))
    def test_lossless_conservation(self, n, seed):
        rng = np.random.default_rng(seed)
        lines = [(int(rng.integers(0, b)), b, 0.0, rng.uniform(0.05, 0.3)) for b in range(1, n)]
        m = build_admittance(lines, n)
        P, _ = injections(rng.uniform(0.9, 1.1, n), rng.uniform(-0.3, 0.3, n), m)
        assert abs(P.sum()) < 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 10_000))
    def test_losses_equal_sum(self, n, seed):
        # Σ P_i equals Σ over lines of g·|V_i − V_j|²
        rng = np.random.default_rng(seed)
        lines = [(int(rng.integers(0, b)), b, rng.uniform(0.01, 0.1), rng.uniform(0.05, 0.3))
                 for b in range(1, n)]
        m = build_admittance(lines, n)
        V, th = rng.uniform(0.9, 1.1, n), rng.uniform(-0.3, 0.3, n)
        P, _ = injections(V, th, m)
        Vc = V * np.exp(1j * th)
        loss = sum(abs(Vc[i] - Vc[j]) ** 2 * (1 / complex(r, x)).real for i, j, r, x in lines)
        assert P.sum() == pytest.approx(loss, abs=1e-10)


class TestJacobian:
    def test_random_four_bus_vs_fd(self):
        rng = np.random.default_rng(4)
        m = random_network(rng, 4)
        V, th = rng.uniform(0.9, 1.1, 4), rng.uniform(-0.3, 0.3, 4)
        J = power_flow_jacobian(V, th, m)
        assert np.max(np.abs(J - fd_jacobian(V, th, m))) < 1e-6

    def test_flat_start_structure(self):
        m = build_admittance([(0, 1, 0, 0.1), (1, 2, 0, 0.2), (0, 2, 0, 0.25)], 3)
        J = power_flow_jacobian(np.ones(3), np.zeros(3), m)
        n = 3
        dPdth, dPdV = J[:n, :n], J[:n, n:]
        off = ~np.eye(n, dtype=bool)
        # P_i = Σ V_i V_j B_ij sin(θ_i − θ_j): ∂P_i/∂θ_j = −B_ij at the flat point
        np.testing.assert_allclose(dPdth[off], -m.B[off], atol=1e-12)
        np.testing.assert_allclose(dPdV, 0, atol=1e-12)

    def test_isolated_bus_self_term(self):
        m = build_admittance([], 1, shunts=[-4j])
        V = 1.3
        J = power_flow_jacobian([V], [0.2], m)
        assert J.shape == (2, 2)
        np.testing.assert_allclose(J, [[0, 0], [0, -2 * V * m.B[0, 0]]], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 100_000))
    def test_fd_randomized(self, n, seed):
        rng = np.random.default_rng(seed)
        m = random_network(rng, n) if n > 1 else build_admittance([], 1, shunts=[0.1 - 3j])
        V, th = rng.uniform(0.85, 1.15, n), rng.uniform(-0.5, 0.5, n)
        assert np.max(np.abs(power_flow_jacobian(V, th, m) - fd_jacobian(V, th, m))) < 1e-6


def bisect(f, lo, hi, it=200):
    flo = f(lo)
    for _ in range(it):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestPowerFlow:
    def boundary(self, P_load, Q_load=0.0):
        return Boundary(np.array([True, False]), np.array([1.0, 1.0]), np.zeros(2),
                        np.array([0.0, P_load]), np.array([0.0, Q_load]))

    def test_two_bus_against_bisection(self):
        m = two_bus()
        sol = solve_power_flow(m, self.boundary(-0.0998))
        # independent oracle: Q_2 = 0 gives V(θ); then solve P_2(θ) = −0.0998 by bisection
        # Q_2 = 10 V² − 10 V cos θ = 0  ⇒ V = cos θ
        P2 = lambda th: 10 * np.cos(th) * np.sin(th)  # P_2 = V·10·sin(θ_2 − 0)
        th = bisect(lambda t: P2(t) + 0.0998, -0.5, 0.0)
        assert sol.theta[1] == pytest.approx(th, abs=1e-9)
        assert sol.V[1] == pytest.approx(np.cos(th), abs=1e-9)
        assert sol.theta[1] == pytest.approx(-0.01, abs=2e-4)
        assert sol.V[1] < 1.0
        assert sol.mismatch < 1e-8

    def test_zero_load_flat(self):
        m = build_admittance([(0, 1, 0.01, 0.1), (1, 2, 0.02, 0.1)], 3, [DER, LOAD, LOAD])
        bd = Boundary(np.array([True, False, False]), np.full(3, 1.02), np.full(3, 0.05),
                      np.zeros(3), np.zeros(3))
        sol = solve_power_flow(m, bd)
        np.testing.assert_allclose(sol.V, 1.02, atol=1e-10)
        np.testing.assert_allclose(sol.theta, 0.05, atol=1e-10)
        np.testing.assert_allclose(sol.P_inj, 0, atol=1e-9)

    def test_overload_diverges(self):
        p_max = 1.0 ** 2 * 10 / 2
        with pytest.raises(NonConvergence):
            solve_power_flow(two_bus(), self.boundary(-2 * p_max))

    def test_no_reference(self):
        bd = Boundary(np.zeros(2, bool), np.ones(2), np.zeros(2), np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            solve_power_flow(two_bus(), bd)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 10_000))
    def test_idempotent_and_residual(self, n, seed):
        rng = np.random.default_rng(seed)
        m = random_network(rng, n)
        src = np.zeros(n, bool)
        src[0] = True
        bd = Boundary(src, np.ones(n), np.zeros(n), -rng.uniform(0, 0.3, n), -rng.uniform(0, 0.1, n))
        sol = solve_power_flow(m, bd)
        P, Q = injections(sol.V, sol.theta, m)
        assert np.max(np.abs(P[1:] - bd.P[1:])) < 1e-8
        assert np.max(np.abs(Q[1:] - bd.Q[1:])) < 1e-8
        again = solve_power_flow(m, bd, guess=(sol.V, sol.theta))
        assert again.iterations == 0
        np.testing.assert_array_equal(again.V, sol.V)
        np.testing.assert_array_equal(again.theta, sol.theta)
