"""Optimizers: closed-form Adam and Sgd steps, quasi-Newton convergence,
orthant-wise handling of L1 terms."""

import numpy as np
import pytest

from forgetlab.optim import Adam, Lbfgs, OwlQn, Sgd, make_optimizer


def quadratic(A, b):
    """Closure for f(x) = 0.5 x'Ax - b'x with exact gradient."""
    def closure(x):
        return float(0.5 * x @ A @ x - b @ x), A @ x - b
    return closure


class TestSgd:
    def test_step_is_scaled_negative_gradient(self):
        opt = Sgd(0.25)
        g = np.array([4.0, -2.0])
        assert np.array_equal(opt.step(g), np.array([-1.0, 0.5]))

    def test_preview_equals_step_and_is_stateless(self):
        opt = Sgd(0.1)
        g = np.array([1.0, 2.0])
        assert np.array_equal(opt.preview(g), opt.step(g))
        assert np.array_equal(opt.step(g), opt.step(g))

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            Sgd(0.0)


class TestAdam:
    def test_first_step_closed_form(self):
        # After one update: m_hat = g, v_hat = g^2, so the step is
        # -lr * g / (|g| + eps) regardless of the betas.
        g = np.array([3.0, -0.5, 1e-4])
        opt = Adam(0.01)
        delta = opt.step(g)
        expected = -0.01 * g / (np.abs(g) + 1e-8)
        assert np.allclose(delta, expected, rtol=1e-12)

    def test_preview_does_not_advance_state(self):
        g = np.array([1.0, -2.0])
        a, b = Adam(0.05), Adam(0.05)
        a.preview(g)
        a.preview(g * 3)
        assert np.array_equal(a.step(g), b.step(g))

    def test_preview_matches_next_step(self):
        rng = np.random.Generator(np.random.PCG64(0))
        opt = Adam(0.02)
        for _ in range(10):
            g = rng.standard_normal(6)
            assert np.array_equal(opt.preview(g), opt.step(g))

    def test_two_steps_track_reference_formula(self):
        g1 = np.array([1.0, 2.0])
        g2 = np.array([-1.0, 0.5])
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        m = (1 - b1) * g1
        v = (1 - b2) * g1 ** 2
        m2 = b1 * m + (1 - b1) * g2
        v2 = b2 * v + (1 - b2) * g2 ** 2
        m_hat = m2 / (1 - b1 ** 2)
        v_hat = v2 / (1 - b2 ** 2)
        expected = -lr * m_hat / (np.sqrt(v_hat) + eps)
        opt = Adam(lr)
        opt.step(g1)
        assert np.allclose(opt.step(g2), expected, rtol=1e-12)

    def test_rejects_non_finite_gradient(self):
        with pytest.raises(ValueError):
            Adam(0.1).step(np.array([np.nan]))


class TestLbfgs:
    def test_solves_quadratic(self):
        rng = np.random.Generator(np.random.PCG64(3))
        M = rng.standard_normal((6, 6))
        A = M @ M.T + 6 * np.eye(6)
        b = rng.standard_normal(6)
        closure = quadratic(A, b)
        x = np.zeros(6)
        opt = Lbfgs()
        f = g = None
        for _ in range(40):
            x, f, g = opt.step(x, closure, f0=f, g0=g)
            if np.linalg.norm(g) < 1e-10:
                break
        assert np.allclose(x, np.linalg.solve(A, b), atol=1e-8)

    def test_monotone_descent_under_wolfe(self):
        def rosenbrock(x):
            f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
            g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]),
                          200 * (x[1] - x[0] ** 2)])
            return float(f), g

        x = np.array([-1.2, 1.0])
        opt = Lbfgs()
        f = g = None
        values = []
        for _ in range(60):
            x, f, g = opt.step(x, rosenbrock, f0=f, g0=g)
            values.append(f)
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        assert np.allclose(x, [1.0, 1.0], atol=1e-5)

    def test_stops_on_vanished_gradient(self):
        closure = quadratic(np.eye(2), np.zeros(2))
        opt = Lbfgs()
        x, f, g = opt.step(np.zeros(2), closure)
        assert np.array_equal(x, np.zeros(2))
        assert f == 0.0

    def test_rejects_bad_wolfe_constants(self):
        with pytest.raises(ValueError):
            Lbfgs(c1=0.5, c2=0.1)


def soft_threshold(b, c):
    return np.sign(b) * np.maximum(np.abs(b) - c, 0.0)


class TestOwlQn:
    def _solve(self, b, c, steps=60):
        def smooth(x):
            return float(0.5 * np.sum((x - b) ** 2)), x - b

        opt = OwlQn(c)
        x = np.zeros_like(b)
        f = g = None
        for _ in range(steps):
            x, f, g = opt.step(x, smooth, f0=f, g0=g)
        return x

    def test_lasso_proximal_solution(self):
        # min 0.5||x - b||^2 + sum c_i |x_i| has the closed-form
        # soft-threshold solution; the orthant-wise iterates must find it.
        rng = np.random.Generator(np.random.PCG64(5))
        for _ in range(5):
            b = rng.standard_normal(12) * 3
            c = rng.random(12) * 2
            x = self._solve(b, c)
            assert np.allclose(x, soft_threshold(b, c), atol=1e-6)

    def test_dominated_coordinates_land_exactly_at_zero(self):
        b = np.array([0.5, -0.3, 2.0, 0.0])
        c = np.array([1.0, 1.0, 0.5, 1.0])
        x = self._solve(b, c)
        assert x[0] == 0.0 and x[1] == 0.0 and x[3] == 0.0
        assert x[2] != 0.0

    def test_zero_penalty_matches_plain_quasi_newton(self):
        rng = np.random.Generator(np.random.PCG64(8))
        M = rng.standard_normal((5, 5))
        A = M @ M.T + 5 * np.eye(5)
        b = rng.standard_normal(5)
        closure = quadratic(A, b)
        x = self._solve_with(OwlQn(np.zeros(5)), closure, np.zeros(5))
        assert np.allclose(x, np.linalg.solve(A, b), atol=1e-6)

    def _solve_with(self, opt, closure, x, steps=60):
        f = g = None
        for _ in range(steps):
            x, f, g = opt.step(x, closure, f0=f, g0=g)
        return x

    def test_stalls_only_when_penalty_dominates_gradient(self):
        # Single coordinate at 0: the step must activate it only when
        # the smooth gradient magnitude exceeds the penalty.
        def smooth_from(g0):
            return lambda x: (float(g0 * x[0] + 0.5 * x[0] ** 2),
                              np.array([g0 + x[0]]))

        stuck = OwlQn(np.array([1.0])).step(np.zeros(1), smooth_from(0.6))[0]
        assert stuck[0] == 0.0
        down = OwlQn(np.array([1.0])).step(np.zeros(1), smooth_from(2.0))[0]
        assert down[0] < 0.0
        up = OwlQn(np.array([1.0])).step(np.zeros(1), smooth_from(-2.0))[0]
        assert up[0] > 0.0

    def test_penalized_objective_never_increases(self):
        rng = np.random.Generator(np.random.PCG64(13))
        b = rng.standard_normal(8) * 2
        c = rng.random(8)

        def smooth(x):
            return float(0.5 * np.sum((x - b) ** 2)), x - b

        opt = OwlQn(c)
        x = np.zeros(8)
        f = g = None
        full = []
        for _ in range(30):
            x, f, g = opt.step(x, smooth, f0=f, g0=g)
            full.append(f + opt.penalty(x))
        assert all(b2 <= a2 + 1e-12 for a2, b2 in zip(full, full[1:]))

    def test_penalty_value(self):
        opt = OwlQn(np.array([1.0, 2.0]))
        assert opt.penalty(np.array([-3.0, 0.5])) == 4.0

    def test_rejects_negative_penalties(self):
        with pytest.raises(ValueError):
            OwlQn(np.array([-0.1]))


def test_make_optimizer_dispatch():
    assert isinstance(make_optimizer("sgd", 0.1), Sgd)
    assert isinstance(make_optimizer("adam", 0.1), Adam)
    assert isinstance(make_optimizer("lbfgs", 0.1), Lbfgs)
    with pytest.raises(ValueError, match="unknown optimizer"):
        make_optimizer("newton", 0.1)
