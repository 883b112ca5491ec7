import itertools
import warnings

import numpy as np
import pytest

from risopt.channel import ChannelSet, sinr
from risopt.phase import PhaseShiftVector, lift, quantize
from risopt.phasesolve import (
    PhaseQuadratic,
    SdrResult,
    SinrConstraintSet,
    SizeLimitError,
    branch_and_bound,
    build_sinr_quadratics,
    gradient_phase,
    manifold_phase,
    mm_quadratic,
    penalty_discrete,
    quadratic_theta_objective,
    riemannian_gradient,
    sdr_phase,
    successive_refinement,
)

TWO_PI = 2 * np.pi


def dense_quadratic(n, seed, sense="minimize"):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n + 1, n + 1)) + 1j * rng.standard_normal((n + 1, n + 1))
    return PhaseQuadratic(m + m.conj().T, sense=sense)


def grid_points(b):
    return np.exp(1j * TWO_PI * np.arange(2**b) / 2**b)


def exhaustive_min(q, b):
    return min(q.value(np.array(c)) for c in itertools.product(grid_points(b), repeat=q.n))


def small_channels(n, nt, k, seed, h_d_scale=1.0):
    rng = np.random.default_rng(seed)
    return ChannelSet(
        g=rng.standard_normal((n, nt)) + 1j * rng.standard_normal((n, nt)),
        h_r=rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n)),
        h_d=h_d_scale * (rng.standard_normal((k, nt)) + 1j * rng.standard_normal((k, nt))),
    )


class TestPhaseQuadratic:
    def test_hermitian_enforced(self):
        with pytest.raises(ValueError):
            PhaseQuadratic(np.array([[0.0, 1.0], [2.0, 0.0]]))

    def test_value_real_on_circle(self):
        q = dense_quadratic(4, 0)
        rng = np.random.default_rng(1)
        v = q.value(PhaseShiftVector.random(4, rng))
        assert isinstance(v, float)

    def test_negated(self):
        q = dense_quadratic(3, 2)
        z = np.exp(1j * np.random.default_rng(3).uniform(0, TWO_PI, 3))
        assert q.negated().value(z) == pytest.approx(-q.value(z))
        assert q.negated().sense == "maximize"


class TestBuildSinrQuadratics:
    def test_zero_reflected_channel_constant(self):
        ch = small_channels(3, 2, 2, seed=4)
        ch = ChannelSet(g=ch.g, h_r=np.zeros_like(ch.h_r), h_d=ch.h_d)
        w = np.random.default_rng(5).standard_normal((2, 2)).astype(complex)
        cons = build_sinr_quadratics(ch, w, 1.0, [1.0, 1.0])
        rng = np.random.default_rng(6)
        vals = [cons.sinr_values(PhaseShiftVector.random(3, rng)) for _ in range(5)]
        assert np.allclose(vals, vals[0])

    def test_matches_channel_sinr(self):
        ch = small_channels(2, 3, 1, seed=7)
        rng = np.random.default_rng(8)
        w = rng.standard_normal((3, 1)) + 1j * rng.standard_normal((3, 1))
        cons = build_sinr_quadratics(ch, w, 0.7, [1.0])
        for _ in range(100):
            phases = PhaseShiftVector.random(2, rng)
            direct = sinr(ch, phases, w, 0, 0.7)
            quad = cons.sinr_values(phases)[0]
            assert quad == pytest.approx(direct, rel=1e-10)

    def test_matches_channel_sinr_multiuser(self):
        ch = small_channels(3, 4, 3, seed=9)
        rng = np.random.default_rng(10)
        w = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        cons = build_sinr_quadratics(ch, w, 0.3, [1.0, 1.0, 1.0])
        for _ in range(20):
            phases = PhaseShiftVector.random(3, rng)
            for k in range(3):
                assert cons.sinr_values(phases)[k] == pytest.approx(
                    sinr(ch, phases, w, k, 0.3), rel=1e-10
                )

    def test_scaling_w_scales_quadratics(self):
        ch = small_channels(3, 2, 2, seed=11)
        w = np.random.default_rng(12).standard_normal((2, 2)).astype(complex)
        c1 = build_sinr_quadratics(ch, w, 1.0, [1.0, 1.0])
        c2 = build_sinr_quadratics(ch, 3.0 * w, 1.0, [1.0, 1.0])
        for k in range(2):
            assert np.allclose(c2.signal[k].r_mat, 9.0 * c1.signal[k].r_mat)
            assert np.allclose(c2.interference[k].r_mat, 9.0 * c1.interference[k].r_mat)


class TestMmQuadratic:
    def test_diagonal_r_terminates_immediately(self):
        q = PhaseQuadratic(np.diag([1.0, 2.0, 3.0]).astype(complex))
        hist = []
        mm_quadratic(q, PhaseShiftVector.zeros(2), history=hist)
        assert len(hist) == 2  # initial value plus the single settling step
        assert hist[0] == pytest.approx(hist[1])

    def test_n1_closed_form(self):
        c = 1.0 - 2.0j
        r = np.array([[0.0, c], [np.conj(c), 0.0]])
        q = PhaseQuadratic(r)
        out = mm_quadratic(q, PhaseShiftVector.zeros(1))
        # minimize 2 Re(conj(z) c): optimum z = -c/|c|
        assert np.allclose(out.phi[0], -c / abs(c), atol=1e-8)

    def test_beats_random_sampling(self):
        q = dense_quadratic(6, 13)
        rng = np.random.default_rng(14)
        hist = []
        mm_quadratic(q, PhaseShiftVector.random(6, rng), history=hist)
        samples = [q.value(np.exp(1j * rng.uniform(0, TWO_PI, 6))) for _ in range(10000)]
        assert hist[-1] <= min(samples) + 1e-6

    def test_monotone_on_100_random_quadratics(self):
        rng = np.random.default_rng(15)
        for s in range(100):
            q = dense_quadratic(5, 1000 + s)
            hist = []
            mm_quadratic(q, PhaseShiftVector.random(5, rng), max_iter=60, history=hist)
            diffs = np.diff(hist)
            assert np.all(diffs <= 1e-9 * (1 + np.abs(hist[0])))

    def test_requires_minimize(self):
        with pytest.raises(ValueError):
            mm_quadratic(dense_quadratic(3, 16, "maximize"), PhaseShiftVector.zeros(3))


class TestGradientPhase:
    def test_1d_cosine_minimizer(self):
        # f(theta) = (cos theta - 0.3)^2 has minimum at theta = acos(0.3)
        def obj(theta):
            c = np.cos(theta[0])
            return (c - 0.3) ** 2, np.array([-2.0 * (c - 0.3) * np.sin(theta[0])])

        out = gradient_phase(obj, np.array([1.0]), tol=1e-10)
        assert out.theta[0] == pytest.approx(np.arccos(0.3), abs=1e-5)

    def test_gradient_vs_finite_difference(self):
        q = dense_quadratic(5, 17)
        obj = quadratic_theta_objective(q)
        rng = np.random.default_rng(18)
        theta = rng.uniform(0, TWO_PI, 5)
        _, g = obj(theta)
        fd = np.zeros(5)
        for i in range(5):
            e = np.zeros(5)
            e[i] = 1e-6
            fd[i] = (obj(theta + e)[0] - obj(theta - e)[0]) / 2e-6
        assert np.max(np.abs(g - fd)) < 1e-5

    def test_multistart_consistency_on_rank_one(self):
        # maximize |c^H ztilde|^2 is unimodular-friendly: all starts reach
        # the same optimal value
        rng = np.random.default_rng(19)
        c = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        q = PhaseQuadratic(-np.outer(c, c.conj()))
        obj = quadratic_theta_objective(q)
        finals = []
        for s in range(5):
            theta0 = np.random.default_rng(s).uniform(0, TWO_PI, 4)
            out = gradient_phase(obj, theta0, tol=1e-10, max_iter=5000)
            finals.append(obj(out.theta)[0])
        assert np.max(finals) - np.min(finals) < 1e-6

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            gradient_phase(lambda t: (np.inf, t), np.zeros(2))


class TestManifoldPhase:
    def test_agrees_with_mm(self):
        q = dense_quadratic(6, 20)
        start = PhaseShiftVector.zeros(6)
        h1, h2 = [], []
        mm_quadratic(q, start, history=h1, max_iter=2000, tol=1e-14)
        manifold_phase(q, start, history=h2, max_iter=5000, tol=1e-10)
        assert h2[-1] == pytest.approx(h1[-1], abs=1e-4 * (1 + abs(h1[-1])))

    def test_tangency_identity(self):
        q = dense_quadratic(5, 21)
        rng = np.random.default_rng(22)
        phases = PhaseShiftVector.random(5, rng)
        rgrad = riemannian_gradient(q, phases)
        tangency = np.real(np.conj(phases.phi) * rgrad)
        assert np.max(np.abs(tangency)) < 1e-12

    def test_n1_closed_form(self):
        c = -0.5 + 1.5j
        q = PhaseQuadratic(np.array([[0.0, c], [np.conj(c), 0.0]]))
        out = manifold_phase(q, PhaseShiftVector(np.array([1.0])))
        assert np.allclose(out.phi[0], -c / abs(c), atol=1e-6)

    def test_monotone_descent_100(self):
        rng = np.random.default_rng(23)
        for s in range(100):
            q = dense_quadratic(5, 2000 + s)
            hist = []
            manifold_phase(q, PhaseShiftVector.random(5, rng), max_iter=60, history=hist)
            assert np.all(np.diff(hist) <= 1e-9 * (1 + abs(hist[0])))


class TestSdrPhase:
    def test_relaxation_bound_holds(self):
        for s in range(10):
            q = dense_quadratic(6, 3000 + s, sense="maximize")
            res = sdr_phase(q, mode="optimize", num_samples=300, seed=s)
            assert res.objective_bound >= res.achieved
            v = res.v.v
            assert np.max(np.abs(np.diag(v).real - 1.0)) < 1e-6
            vals = np.linalg.eigvalsh(v)
            assert vals[0] > -1e-6 * max(1.0, vals[-1])

    def test_rank_one_recovery(self):
        rng = np.random.default_rng(24)
        c = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        q = PhaseQuadratic(np.outer(c, c.conj()), sense="maximize")
        res = sdr_phase(q, mode="optimize", num_samples=50, seed=1)
        opt = float(np.sum(np.abs(c))) ** 2
        assert res.achieved == pytest.approx(opt, rel=1e-5)
        assert res.objective_bound >= res.achieved

    def test_feasibility_single_user_vs_grid(self):
        ch = small_channels(3, 2, 1, seed=25, h_d_scale=0.1)
        rng = np.random.default_rng(26)
        w = rng.standard_normal((2, 1)) + 1j * rng.standard_normal((2, 1))
        cons = build_sinr_quadratics(ch, w, 1.0, [2.0])
        res = sdr_phase(cons, mode="feasibility", num_samples=500, seed=0)
        # exhaustive oracle over 72 points per element
        ang = TWO_PI * np.arange(72) / 72
        best = -np.inf
        for a in ang:
            for b in ang:
                for c in ang:
                    z = np.exp(1j * np.array([a, b, c]))
                    best = max(best, cons.residual(z))
        assert res.objective_bound >= best - 1e-9
        assert res.achieved >= best - 0.05 * abs(best)

    def test_warm_start_bound_dominates_current_point(self):
        ch = small_channels(4, 3, 2, seed=27)
        rng = np.random.default_rng(28)
        w = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
        phases = PhaseShiftVector.random(4, rng)
        cons = build_sinr_quadratics(ch, w, 1.0, [0.5, 0.5])
        res = sdr_phase(cons, mode="feasibility", num_samples=200, seed=0, v0=lift(phases))
        assert res.objective_bound >= cons.residual(phases) - 1e-9

    def test_extraction_never_beats_bound_50_instances(self):
        for s in range(50):
            q = dense_quadratic(4, 4000 + s, sense="maximize")
            res = sdr_phase(q, mode="optimize", num_samples=100, seed=s)
            assert res.objective_bound >= res.achieved


class TestSuccessiveRefinement:
    def test_single_element_exhaustive(self):
        q = dense_quadratic(1, 29)
        out = successive_refinement(q, PhaseShiftVector.zeros(1), 3)
        vals = [q.value(np.array([g])) for g in grid_points(3)]
        assert q.value(out) == pytest.approx(min(vals), abs=1e-12)

    def test_matches_exhaustive_80_percent(self):
        matches = 0
        for s in range(100):
            q = dense_quadratic(6, 5000 + s)
            out = successive_refinement(q, None, 1)
            best = exhaustive_min(q, 1)
            assert q.value(out) >= best - 1e-12
            if q.value(out) == pytest.approx(best, abs=1e-9):
                matches += 1
        assert matches >= 80

    def test_fixed_point_returned_unchanged(self):
        q = dense_quadratic(4, 30)
        first = successive_refinement(q, PhaseShiftVector.zeros(4), 1)
        again = successive_refinement(q, first, 1)
        assert np.array_equal(first.theta, again.theta)

    def test_callable_objective(self):
        target = grid_points(2)[np.array([0, 1, 2])]
        fn = lambda z: float(np.linalg.norm(z - target) ** 2)
        out = successive_refinement(fn, PhaseShiftVector.zeros(3), 2)
        assert fn(out.phi) == pytest.approx(0.0, abs=1e-12)

    def test_never_worse_than_start(self):
        for s in range(20):
            q = dense_quadratic(5, 6000 + s)
            start = quantize(PhaseShiftVector.random(5, np.random.default_rng(s)), 1)
            out = successive_refinement(q, start, 1)
            assert q.value(out) <= q.value(start) + 1e-12


class TestBranchAndBound:
    def test_equals_exhaustive_n6_b1(self):
        for s in range(50):
            q = dense_quadratic(6, 7000 + s)
            out = branch_and_bound(q, 1)
            assert q.value(out) == exhaustive_min(q, 1)

    def test_equals_exhaustive_n4_b2(self):
        for s in range(20):
            q = dense_quadratic(4, 8000 + s)
            out = branch_and_bound(q, 2)
            assert q.value(out) == exhaustive_min(q, 2)

    def test_separable_blocks(self):
        # block-diagonal coupling only through the linear border terms:
        # each element optimizes independently
        rng = np.random.default_rng(31)
        n = 5
        r = np.zeros((n + 1, n + 1), dtype=complex)
        c = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        r[:n, n] = c
        r[n, :n] = c.conj()
        q = PhaseQuadratic(r)
        out = branch_and_bound(q, 2)
        for i in range(n):
            vals = [2 * np.real(np.conj(g) * c[i]) for g in grid_points(2)]
            assert 2 * np.real(np.conj(out.phi[i]) * c[i]) == pytest.approx(min(vals), abs=1e-9)

    def test_n1_matches_sr(self):
        q = dense_quadratic(1, 32)
        bnb = branch_and_bound(q, 2)
        sr = successive_refinement(q, PhaseShiftVector.zeros(1), 2)
        assert q.value(bnb) == q.value(sr)

    def test_bnb_never_above_sr(self):
        for s in range(20):
            q = dense_quadratic(5, 9000 + s)
            bnb = branch_and_bound(q, 1)
            sr = successive_refinement(q, None, 1)
            assert q.value(bnb) <= q.value(sr) + 1e-12

    def test_size_guard(self):
        with pytest.raises(SizeLimitError):
            branch_and_bound(dense_quadratic(17, 33), 1)
        with pytest.raises(SizeLimitError):
            branch_and_bound(dense_quadratic(11, 34), 2)


class TestPenaltyDiscrete:
    def test_grid_point_optimum_recovered(self):
        # quadratic minimized exactly at a grid point: distance to a grid target
        target = grid_points(2)[np.array([1, 3, 0])]
        n = 3
        r = np.zeros((n + 1, n + 1), dtype=complex)
        r[:n, :n] = np.eye(n)
        r[:n, n] = -target
        r[n, :n] = -target.conj()
        q = PhaseQuadratic(r)
        out = penalty_discrete(q, 2)
        assert np.allclose(out.phi, target, atol=1e-9)

    def test_median_gap_vs_bnb(self):
        gaps = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for s in range(50):
                q = dense_quadratic(4, 10000 + s)
                pen = penalty_discrete(q, 1)
                vals = [
                    q.value(np.array(c)) for c in itertools.product(grid_points(1), repeat=4)
                ]
                best, worst = min(vals), max(vals)
                bnb_val = q.value(branch_and_bound(q, 1))
                assert bnb_val == best
                gaps.append((q.value(pen) - best) / max(worst - best, 1e-12))
        assert np.median(gaps) <= 0.05

    def test_violation_decreases_across_stages(self):
        q = dense_quadratic(5, 35)
        hist = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            penalty_discrete(
                q, 1, penalty_schedule=np.abs(q.r_mat).max() * 4.0 ** np.arange(6),
                violation_history=hist,
            )
        active = [h for h in hist if h > 1e-4]
        assert all(b < a for a, b in zip(active, active[1:]))

    def test_never_worse_than_quantized_continuum_70_percent(self):
        wins = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for s in range(30):
                q = dense_quadratic(4, 11000 + s)
                pen = penalty_discrete(q, 1)
                cont = mm_quadratic(q, PhaseShiftVector.zeros(4))
                if q.value(pen) <= q.value(quantize(cont, 1)) + 1e-9:
                    wins += 1
        assert wins >= 0.7 * 30


class TestSolverInvariants:
    def test_all_solvers_return_declared_resolution(self):
        q = dense_quadratic(4, 36)
        rng = np.random.default_rng(37)
        start = PhaseShiftVector.random(4, rng)
        assert mm_quadratic(q, start).bits is None
        assert manifold_phase(q, start).bits is None
        assert successive_refinement(q, start, 2).bits == 2
        assert branch_and_bound(q, 2).bits == 2
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            assert penalty_discrete(q, 2).bits == 2
