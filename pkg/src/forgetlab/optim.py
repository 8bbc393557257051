"""First-order and quasi-Newton optimizers over flat parameter vectors.

Sgd and Adam expose ``preview`` (the update they would apply for a
gradient, without mutating state) next to ``step`` so that gradient
ledgers can attribute parameter deltas exactly. Lbfgs is closure-driven:
two-loop recursion with bounded memory and a strong Wolfe line search,
falling back to a short steepest-descent step when the search fails.
OwlQn extends it to L1-penalized objectives with orthant-wise steps.
"""

from __future__ import annotations

import numpy as np

from .validation import as_flat_float


def _check_grad(grad: np.ndarray) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    return grad


class Sgd:
    """Plain gradient descent: delta = -lr * grad."""

    def __init__(self, learning_rate: float):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)

    def preview(self, grad: np.ndarray) -> np.ndarray:
        grad = _check_grad(grad)
        return -self.learning_rate * grad

    def step(self, grad: np.ndarray) -> np.ndarray:
        return self.preview(grad)


class Adam:
    """Adam with bias correction.

    With the defaults the very first step has magnitude close to the
    learning rate in every coordinate regardless of gradient scale,
    which makes the learning rate directly interpretable.
    """

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = None
        self.v = None

    def _moments_after(self, grad: np.ndarray):
        m = self.m if self.m is not None else np.zeros_like(grad)
        v = self.v if self.v is not None else np.zeros_like(grad)
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        return m, v

    def preview(self, grad: np.ndarray) -> np.ndarray:
        grad = _check_grad(grad)
        m, v = self._moments_after(grad)
        t = self.t + 1
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        return -self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def step(self, grad: np.ndarray) -> np.ndarray:
        grad = _check_grad(grad)
        delta = self.preview(grad)
        self.m, self.v = self._moments_after(grad)
        self.t += 1
        return delta


class Lbfgs:
    """Limited-memory BFGS with a strong Wolfe line search.

    ``step`` takes the current point and a closure returning
    (loss, gradient) and returns the new point together with its loss
    and gradient so callers can thread evaluations between iterations.
    The line search spends at most ``max_line_search`` closure
    evaluations; on failure the step falls back to a short steepest
    descent move and the curvature memory is reset.
    """

    def __init__(self, memory: int = 10, c1: float = 1e-4, c2: float = 0.9,
                 max_line_search: int = 20, grad_tol: float = 1e-12):
        if not 0.0 < c1 < c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        self.memory = int(memory)
        self.c1 = float(c1)
        self.c2 = float(c2)
        self.max_line_search = int(max_line_search)
        self.grad_tol = float(grad_tol)
        self._s = []
        self._y = []
        self._rho = []
        self.line_search_failures = 0

    def reset(self) -> None:
        self._s.clear()
        self._y.clear()
        self._rho.clear()

    def _direction(self, grad: np.ndarray) -> np.ndarray:
        q = grad.copy()
        alphas = []
        for s, y, rho in zip(reversed(self._s), reversed(self._y), reversed(self._rho)):
            a = rho * (s @ q)
            q -= a * y
            alphas.append(a)
        if self._s:
            s, y = self._s[-1], self._y[-1]
            gamma = (s @ y) / (y @ y)
        else:
            gamma = 1.0
        r = gamma * q
        for (s, y, rho), a in zip(zip(self._s, self._y, self._rho), reversed(alphas)):
            b = rho * (y @ r)
            r += s * (a - b)
        return -r

    def _push_pair(self, s: np.ndarray, y: np.ndarray) -> None:
        sy = float(s @ y)
        # Skip updates without positive curvature; they would break the
        # positive-definiteness of the implicit Hessian estimate.
        if sy <= 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            return
        self._s.append(s)
        self._y.append(y)
        self._rho.append(1.0 / sy)
        if len(self._s) > self.memory:
            self._s.pop(0)
            self._y.pop(0)
            self._rho.pop(0)

    def step(self, x: np.ndarray, closure, f0: float | None = None,
             g0: np.ndarray | None = None):
        """One quasi-Newton step. Returns (x_new, f_new, g_new)."""
        x = as_flat_float(x, name="x")
        if f0 is None or g0 is None:
            f0, g0 = closure(x)
        g0 = _check_grad(np.asarray(g0, dtype=np.float64))
        if not np.isfinite(f0):
            raise ValueError("non-finite loss at line search start")
        if np.linalg.norm(g0, ord=np.inf) <= self.grad_tol:
            return x, float(f0), g0

        d = self._direction(g0)
        dphi0 = float(g0 @ d)
        if dphi0 >= 0.0:
            # Stale curvature produced a non-descent direction.
            self.reset()
            d = -g0
            dphi0 = float(g0 @ d)

        result = _strong_wolfe(closure, x, d, float(f0), dphi0,
                               self.c1, self.c2, self.max_line_search)
        if result is None:
            self.line_search_failures += 1
            self.reset()
            gnorm = float(np.linalg.norm(g0))
            t = 1e-2 / (1.0 + gnorm)
            x_new = x - t * g0
            f_new, g_new = closure(x_new)
            g_new = _check_grad(np.asarray(g_new, dtype=np.float64))
        else:
            alpha, f_new, g_new = result
            x_new = x + alpha * d
        self._push_pair(x_new - x, g_new - g0)
        return x_new, float(f_new), g_new


def _strong_wolfe(closure, x, d, f0, dphi0, c1, c2, max_evals):
    """Bracket and zoom for the strong Wolfe conditions.

    Returns (alpha, f, g) or None if the conditions were not met within
    the evaluation budget.
    """
    evals = 0

    def phi(alpha):
        nonlocal evals
        f, g = closure(x + alpha * d)
        evals += 1
        return float(f), np.asarray(g, dtype=np.float64)

    alpha_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    alpha = 1.0
    alpha_cap = 1e10
    first = True
    while evals < max_evals:
        f_a, g_a = phi(alpha)
        dphi_a = float(g_a @ d)
        if (f_a > f0 + c1 * alpha * dphi0) or (not first and f_a >= f_prev):
            return _zoom(phi, d, f0, dphi0, c1, c2,
                         alpha_prev, f_prev, dphi_prev, alpha, f_a,
                         lambda: evals, max_evals)
        if abs(dphi_a) <= -c2 * dphi0:
            return alpha, f_a, g_a
        if dphi_a >= 0.0:
            return _zoom(phi, d, f0, dphi0, c1, c2,
                         alpha, f_a, dphi_a, alpha_prev, f_prev,
                         lambda: evals, max_evals)
        alpha_prev, f_prev, dphi_prev = alpha, f_a, dphi_a
        alpha = min(2.0 * alpha, alpha_cap)
        first = False
    return None


def _zoom(phi, d, f0, dphi0, c1, c2, lo, f_lo, dphi_lo, hi, f_hi,
          evals_used, max_evals):
    """Shrink the bracket [lo, hi] until strong Wolfe holds."""
    while evals_used() < max_evals:
        alpha = 0.5 * (lo + hi)
        f_a, g_a = phi(alpha)
        dphi_a = float(g_a @ d)
        if (f_a > f0 + c1 * alpha * dphi0) or (f_a >= f_lo):
            hi, f_hi = alpha, f_a
        else:
            if abs(dphi_a) <= -c2 * dphi0:
                return alpha, f_a, g_a
            if dphi_a * (hi - lo) >= 0.0:
                hi, f_hi = lo, f_lo
            lo, f_lo, dphi_lo = alpha, f_a, dphi_a
        if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
            break
    return None


class OwlQn:
    """Orthant-wise limited-memory quasi-Newton for f(x) + sum_d c_d*|x_d|.

    A strong-Wolfe search on the raw subgradient objective cannot leave
    a point where the L1 slope exceeds the smooth descent rate, so the
    penalty is handled the orthant-wise way instead: directions come
    from the pseudo-gradient, trial points are projected back onto the
    orthant picked at the start of the step (coordinates that would
    cross zero stop exactly at zero), and curvature pairs use only the
    smooth gradient. The closure must return the smooth part (f, grad)
    alone; the penalty lives in ``penalties``.
    """

    def __init__(self, penalties, memory: int = 10, c1: float = 1e-4,
                 max_line_search: int = 20, grad_tol: float = 1e-12):
        self.c = np.asarray(penalties, dtype=np.float64)
        if np.any(self.c < 0) or not np.all(np.isfinite(self.c)):
            raise ValueError("penalties must be finite and >= 0")
        self.memory = int(memory)
        self.c1 = float(c1)
        self.max_line_search = int(max_line_search)
        self.grad_tol = float(grad_tol)
        self._s = []
        self._y = []
        self._rho = []
        self.line_search_failures = 0

    def reset(self) -> None:
        self._s.clear()
        self._y.clear()
        self._rho.clear()

    def penalty(self, x: np.ndarray) -> float:
        return float(np.sum(self.c * np.abs(x)))

    def _pseudo_gradient(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        # Away from zero the objective is smooth; at zero a coordinate
        # only activates when the smooth gradient beats its penalty.
        pg = np.where(x != 0.0, g + self.c * np.sign(x), 0.0)
        at_zero = x == 0.0
        right = g + self.c
        left = g - self.c
        pg = np.where(at_zero & (right < 0.0), right, pg)
        pg = np.where(at_zero & (left > 0.0), left, pg)
        return pg

    _direction = Lbfgs._direction
    _push_pair = Lbfgs._push_pair

    def step(self, x: np.ndarray, closure, f0: float | None = None,
             g0: np.ndarray | None = None):
        """One orthant-wise step. Returns (x_new, f_new, g_new).

        f and g are the smooth part only, matching the closure contract.
        """
        x = as_flat_float(x, name="x")
        if len(self.c) != len(x):
            raise ValueError("penalties and x must have matching length")
        if f0 is None or g0 is None:
            f0, g0 = closure(x)
        g0 = _check_grad(np.asarray(g0, dtype=np.float64))
        if not np.isfinite(f0):
            raise ValueError("non-finite loss at line search start")

        pg = self._pseudo_gradient(x, g0)
        if np.linalg.norm(pg, ord=np.inf) <= self.grad_tol:
            return x, float(f0), g0

        d = self._direction(pg)
        # Keep only coordinates where the quasi-Newton direction agrees
        # with steepest descent on the pseudo-gradient; the scaling the
        # two-loop applies can flip signs on stale curvature.
        d = np.where(d * pg < 0.0, d, 0.0)
        if not np.any(d):
            self.reset()
            d = -pg

        # Orthant the step must stay inside: the sign of x, or of the
        # descent direction for coordinates currently at zero.
        orthant = np.sign(x)
        orthant = np.where(orthant == 0.0, np.sign(-pg), orthant)

        full0 = float(f0) + self.penalty(x)
        alpha = 1.0
        accepted = None
        for _ in range(self.max_line_search):
            xt = x + alpha * d
            xt = np.where(xt * orthant > 0.0, xt, 0.0)
            if not np.array_equal(xt, x):
                f_t, g_t = closure(xt)
                g_t = _check_grad(np.asarray(g_t, dtype=np.float64))
                full_t = float(f_t) + self.penalty(xt)
                if full_t <= full0 + self.c1 * float(pg @ (xt - x)):
                    accepted = (xt, float(f_t), g_t)
                    break
            alpha *= 0.5
        if accepted is None:
            self.line_search_failures += 1
            self.reset()
            return x, float(f0), g0
        x_new, f_new, g_new = accepted
        self._push_pair(x_new - x, g_new - g0)
        return x_new, f_new, g_new


_OPTIMIZERS = ("sgd", "adam", "lbfgs")


def make_optimizer(name: str, learning_rate: float):
    """Factory used by the training loop. Lbfgs ignores the learning rate."""
    if name == "sgd":
        return Sgd(learning_rate)
    if name == "adam":
        return Adam(learning_rate)
    if name == "lbfgs":
        return Lbfgs()
    raise ValueError(f"unknown optimizer {name!r}; expected one of {_OPTIMIZERS}")
