"""Adam with linear learning-rate annealing, then L-BFGS run to convergence.

Both optimizers take ``loss_fn(params) -> (loss, grad_vector)`` where
``params`` is either a flat numpy vector or an :class:`MlpModel`; the result
carries parameters of the same kind.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import ConfigurationError, NumericError
from .net import MlpModel


@dataclass(frozen=True)
class AdamConfig:
    epochs: int = 100
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("Adam epochs must be >= 1")
        if not 0 <= self.lr_end <= self.lr_start or self.lr_start <= 0:
            raise ConfigurationError("need 0 <= lr_end <= lr_start and lr_start > 0")

    def learning_rate(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.lr_start
        return self.lr_start + (self.lr_end - self.lr_start) * epoch / (self.epochs - 1)


@dataclass(frozen=True)
class LbfgsConfig:
    history_size: int = 50
    max_iterations: int = 5000
    gradient_tolerance: float = 1e-9
    step_tolerance: float = 1e-12
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25

    def __post_init__(self):
        if self.history_size < 1 or self.max_iterations < 1:
            raise ConfigurationError("history_size and max_iterations must be >= 1")
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ConfigurationError("L-BFGS tolerances must be positive")
        if not 0 < self.c1 < self.c2 < 1:
            raise ConfigurationError("line search needs 0 < c1 < c2 < 1")


@dataclass
class AdamResult:
    params: Any
    loss: float
    initial_loss: float
    trace: list[float]
    learning_rates: list[float]
    steps: int


@dataclass
class LbfgsResult:
    params: Any
    loss: float
    initial_loss: float
    iterations: int
    evaluations: int
    termination: str
    history: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    params: Any
    loss: float
    adam: AdamResult
    lbfgs: LbfgsResult | None

    @property
    def termination(self) -> str:
        return self.lbfgs.termination if self.lbfgs else "adam_only"


def _unpack(params):
    if isinstance(params, MlpModel):
        return params.to_vector(), params.with_vector
    return np.array(params, dtype=np.float64, copy=True), lambda v: np.array(v, copy=True)


def _evaluate(loss_fn, wrap, vec, where: str):
    loss, grad = loss_fn(wrap(vec))
    loss = float(loss)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite loss/gradient at {where}: loss={loss!r}")
    return loss, grad


def run_adam(params, loss_fn: Callable, config: AdamConfig = AdamConfig()) -> AdamResult:
    """Full-batch Adam; returns the best parameters seen (never worse than the start)."""
    x, wrap = _unpack(params)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace, lrs = [], []
    best_x, best_loss = x.copy(), None
    for epoch in range(config.epochs):
        loss, g = _evaluate(loss_fn, wrap, x, f"Adam epoch {epoch}")
        trace.append(loss)
        if best_loss is None or loss < best_loss:
            best_x, best_loss = x.copy(), loss
        lr = config.learning_rate(epoch)
        lrs.append(lr)
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1 ** (epoch + 1))
        v_hat = v / (1 - config.beta2 ** (epoch + 1))
        x = x - lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
    loss, _ = _evaluate(loss_fn, wrap, x, f"Adam epoch {config.epochs}")
    if loss < best_loss:
        best_x, best_loss = x.copy(), loss
    return AdamResult(wrap(best_x), best_loss, trace[0], trace, lrs, config.epochs)


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic through two points with slopes, clipped to [lo, hi]."""
    d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0:
        d2 = np.sqrt(disc) * np.sign(x2 - x1)
        denom = g2 - g1 + 2 * d2
        if denom != 0:
            t = x2 - (x2 - x1) * (g2 + d2 - d1) / denom
            if np.isfinite(t):
                return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(phi: Callable[[float], tuple[float, np.ndarray, float]], f0: float, d0: float,
                 step: float, c1: float = 1e-4, c2: float = 0.9, max_evals: int = 25):
    """Bracketing + zoom line search for the strong Wolfe conditions.

    ``phi(a)`` returns (f, grad, directional derivative) at step ``a``.
    Returns (step, f, grad, evaluations, ok).
    """
    a_prev, f_prev, d_prev = 0.0, f0, d0
    g_prev = None
    a = step
    evals = 0
    best = None
    while evals < max_evals:
        f, g, d = phi(a)
        evals += 1
        if best is None or f < best[1]:
            best = (a, f, g)
        if f > f0 + c1 * a * d0 or (evals > 1 and f >= f_prev):
            return _zoom(phi, f0, d0, (a_prev, f_prev, d_prev, g_prev), (a, f, d, g),
                         c1, c2, max_evals - evals, evals, best)
        if abs(d) <= -c2 * d0:
            return a, f, g, evals, True
        if d >= 0:
            return _zoom(phi, f0, d0, (a, f, d, g), (a_prev, f_prev, d_prev, g_prev),
                         c1, c2, max_evals - evals, evals, best)
        a_prev, f_prev, d_prev, g_prev = a, f, d, g
        a = 2.0 * a
    a, f, g = best
    return a, f, g, evals, f < f0


def _zoom(phi, f0, d0, lo, hi, c1, c2, budget, evals, best):
    a_lo, f_lo, d_lo, _ = lo
    a_hi, f_hi, d_hi, _ = hi
    for _ in range(max(budget, 0)):
        left, right = min(a_lo, a_hi), max(a_lo, a_hi)
        width = right - left
        if width <= 1e-16 * max(1.0, right):
            break
        a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi, left, right)
        # keep the trial point away from the bracket ends
        margin = 0.1 * width
        if a - left < margin or right - a < margin:
            a = 0.5 * (left + right)
        f, g, d = phi(a)
        evals += 1
        if f < best[1]:
            best = (a, f, g)
        if f > f0 + c1 * a * d0 or f >= f_lo:
            a_hi, f_hi, d_hi = a, f, d
        else:
            if abs(d) <= -c2 * d0:
                return a, f, g, evals, True
            if d * (a_hi - a_lo) >= 0:
                a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
            a_lo, f_lo, d_lo = a, f, d
    a, f, g = best
    return a, f, g, evals, f < f0


class _History:
    """Curvature pairs (s, y) in preallocated rows, oldest first."""

    def __init__(self, size: int, n: int):
        self.S = np.empty((size, n))
        self.Y = np.empty((size, n))
        self.m = 0

    def clear(self):
        self.m = 0

    def push(self, s, y):
        if self.m == len(self.S):
            self.S[:-1] = self.S[1:]
            self.Y[:-1] = self.Y[1:]
            self.m -= 1
        self.S[self.m] = s
        self.Y[self.m] = y
        self.m += 1

    def direction(self, g):
        """-H g with H the compact-form L-BFGS inverse Hessian."""
        m = self.m
        if m == 0:
            return -g
        S, Y = self.S[:m], self.Y[:m]
        SY = S @ Y.T
        YY = Y @ Y.T
        gamma = SY[-1, -1] / YY[-1, -1]
        R = np.triu(SY)
        a = S @ g
        b = Y @ g
        u = np.linalg.solve(R, a)
        p = np.linalg.solve(R.T, np.diag(SY) * u + gamma * (YY @ u) - gamma * b)
        return -(gamma * g + p @ S - gamma * (u @ Y))


def run_lbfgs(params, loss_fn: Callable, config: LbfgsConfig = LbfgsConfig()) -> LbfgsResult:
    """Limited-memory BFGS with a strong-Wolfe line search.

    Stops on ``max|grad| < gradient_tolerance``, ``max|step| < step_tolerance``,
    ``max_iterations``, or a failed line search (best point so far is kept).
    """
    x, wrap = _unpack(params)
    f, g = _evaluate(loss_fn, wrap, x, "L-BFGS start")
    f_init = f
    evals = 1
    hist = _History(config.history_size, x.size)
    history = [f]

    def finish(iterations, reason):
        return LbfgsResult(wrap(x), f, f_init, iterations, evals, reason, history)

    if np.max(np.abs(g)) < config.gradient_tolerance:
        return finish(0, "gradient_tolerance")

    for it in range(1, config.max_iterations + 1):
        d = hist.direction(g)
        slope = g @ d
        if not slope < 0:
            hist.clear()
            d = -g
            slope = g @ d
        step = min(1.0, 1.0 / np.sum(np.abs(g))) if it == 1 else 1.0

        def phi(a, x=x, d=d):
            fa, ga = _evaluate(loss_fn, wrap, x + a * d, f"L-BFGS iteration {it}")
            return fa, ga, ga @ d

        a, f_new, g_new, n_ls, ok = strong_wolfe(phi, f, slope, step, config.c1, config.c2,
                                                  config.max_line_search)
        evals += n_ls
        if not ok:
            return finish(it - 1, "line_search_failed")
        s = a * d
        y = g_new - g
        x = x + s
        f, g = f_new, g_new
        history.append(f)
        if s @ y > 1e-10 * (y @ y):
            hist.push(s, y)
        if np.max(np.abs(g)) < config.gradient_tolerance:
            return finish(it, "gradient_tolerance")
        if np.max(np.abs(s)) < config.step_tolerance:
            return finish(it, "step_tolerance")
    return finish(config.max_iterations, "max_iterations")


def train(params, loss_fn: Callable, adam: AdamConfig = AdamConfig(),
          lbfgs: LbfgsConfig | None = LbfgsConfig()) -> TrainResult:
    """Two-phase schedule: Adam for ``adam.epochs`` steps, then L-BFGS."""
    adam_result = run_adam(params, loss_fn, adam)
    if lbfgs is None:
        return TrainResult(adam_result.params, adam_result.loss, adam_result, None)
    lbfgs_result = run_lbfgs(adam_result.params, loss_fn, lbfgs)
    return TrainResult(lbfgs_result.params, lbfgs_result.loss, adam_result, lbfgs_result)
