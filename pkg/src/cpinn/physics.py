"""PINN losses for the logistic growth ODE and the Buckley-Leverett PDE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net
from .errors import ConfigurationError, ShapeError
from .net import MlpModel


def flux(u):
    """Buckley-Leverett flux 4u^2 / (4u^2 + (1-u)^2)."""
    u = np.asarray(u, dtype=np.float64)
    return 4.0 * u * u / (4.0 * u * u + (1.0 - u) ** 2)


def flux_derivative(u):
    # d/du simplifies to 8u(1-u) / D^2 with D = 5u^2 - 2u + 1
    u = np.asarray(u, dtype=np.float64)
    den = 5.0 * u * u - 2.0 * u + 1.0
    return 8.0 * u * (1.0 - u) / (den * den)


def flux_second_derivative(u):
    u = np.asarray(u, dtype=np.float64)
    den = 5.0 * u * u - 2.0 * u + 1.0
    return 8.0 * (10.0 * u ** 3 - 15.0 * u * u + 1.0) / den ** 3


def flux_extrema(a, b):
    """(min f, max f) over the closed interval between a and b.

    f is monotone except at its critical points u=0 (f=0) and u=1 (f=1).
    """
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    fa, fb = flux(lo), flux(hi)
    fmin = np.minimum(fa, fb)
    fmax = np.maximum(fa, fb)
    fmin = np.where((lo <= 0.0) & (hi >= 0.0), 0.0, fmin)
    fmax = np.where((lo <= 1.0) & (hi >= 1.0), 1.0, fmax)
    return fmin, fmax


def max_wave_speed(u_min: float, u_max: float) -> float:
    """sup |f'| over [u_min, u_max], using the roots of f'' exactly."""
    candidates = [u_min, u_max]
    for r in np.roots([10.0, -15.0, 0.0, 1.0]):
        if abs(r.imag) < 1e-12 and u_min <= r.real <= u_max:
            candidates.append(r.real)
    return float(np.max(np.abs(flux_derivative(np.array(candidates)))))


@dataclass(frozen=True)
class LogisticProblem:
    """dN/dt = beta N (1 - N), N(0) = n0.  The network sees t rescaled to [0, 1]."""

    beta: float = 0.05
    n0: float = 0.1
    t_domain: tuple[float, float] = (0.0, 150.0)
    inverse_mode: bool = False

    def __post_init__(self):
        if not self.t_domain[1] > self.t_domain[0]:
            raise ConfigurationError(f"empty time domain {self.t_domain}")

    input_dim = 1

    @property
    def time_scale(self) -> float:
        return self.t_domain[1] - self.t_domain[0]

    def scale(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        return ((t - self.t_domain[0]) / self.time_scale)[:, None]

    def default_grid(self, n_collocation: int = 200) -> "CollocationGrid":
        t = np.linspace(self.t_domain[0], self.t_domain[1], n_collocation)
        return CollocationGrid(t[:, None], np.array([[self.t_domain[0]]]), np.array([self.n0]))


@dataclass(frozen=True)
class BuckleyLeverettProblem:
    """u_t - f(u)_x = 0 on x in [-1, 1], t in [0, 1]; inputs ordered (t, x)."""

    x_domain: tuple[float, float] = (-1.0, 1.0)
    t_domain: tuple[float, float] = (0.0, 1.0)
    u_left: float = -3.0
    u_right: float = 3.0

    input_dim = 2

    def scale(self, tx) -> np.ndarray:
        return np.asarray(tx, dtype=np.float64).reshape(-1, 2)

    def initial_condition(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.where(x < 0.0, self.u_left, self.u_right)

    def default_grid(self, n_t: int = 50, n_x: int = 50, n_ic: int = 100) -> "CollocationGrid":
        t = np.linspace(*self.t_domain, n_t)
        x = np.linspace(*self.x_domain, n_x)
        tt, xx = np.meshgrid(t, x, indexing="ij")
        interior = np.column_stack([tt.ravel(), xx.ravel()])
        x_ic = np.linspace(*self.x_domain, n_ic + 1)
        x_ic = x_ic[x_ic != 0.0]
        if x_ic.size > n_ic:
            x_ic = x_ic[np.round(np.linspace(0, x_ic.size - 1, n_ic)).astype(int)]
        ic = np.column_stack([np.full(x_ic.size, self.t_domain[0]), x_ic])
        return CollocationGrid(interior, ic, self.initial_condition(x_ic))


@dataclass
class CollocationGrid:
    interior: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray


@dataclass(frozen=True)
class LossWeights:
    data: float = 1.0
    physics: float = 1.0
    ic: float = 1.0


@dataclass
class LossTerms:
    total: float
    data: float
    physics: float
    ic: float


def predict(model: MlpModel, problem, inputs) -> np.ndarray:
    return net.forward(model, problem.scale(inputs))


def _beta(model: MlpModel, problem: LogisticProblem) -> float:
    if problem.inverse_mode:
        if not model.inverse_mode:
            raise ConfigurationError("inverse problem needs a model with trainable beta")
        return model.beta
    return problem.beta


def logistic_residual(model: MlpModel, t_points, problem: LogisticProblem = LogisticProblem()):
    """dN/dt - beta N (1 - N) at each point, in the problem's time units."""
    trace = net.Trace(model, problem.scale(t_points), directions=(0,))
    n = trace.output
    dn_dt = trace.tangents[0] / problem.time_scale
    return dn_dt - _beta(model, problem) * n * (1.0 - n)


def bl_residual(model: MlpModel, tx_points, problem: BuckleyLeverettProblem = BuckleyLeverettProblem()):
    """u_t - f'(u) u_x at each (t, x) point."""
    trace = net.Trace(model, problem.scale(tx_points), directions=(0, 1))
    u = trace.output
    return trace.tangents[0] - flux_derivative(u) * trace.tangents[1]


class PinnObjective:
    """Composite loss w_data*MSE(data) + w_phys*MSE(residual) + w_ic*MSE(ic).

    Call with a model to get ``(loss, gradient_vector)``; the gradient vector
    follows :meth:`MlpModel.to_vector` ordering, including beta in inverse mode.
    """

    def __init__(self, problem, data_inputs, data_obs, grid: CollocationGrid | None,
                 weights: LossWeights = LossWeights()):
        self.problem = problem
        self.weights = weights
        data_x = problem.scale(data_inputs) if data_inputs is not None and len(data_inputs) else \
            np.empty((0, problem.input_dim))
        data_y = np.asarray(data_obs, dtype=np.float64).reshape(-1) if data_obs is not None else np.empty(0)
        if data_x.shape[0] != data_y.shape[0]:
            raise ShapeError("data inputs and observations differ in length")
        if grid is None:
            grid = CollocationGrid(np.empty((0, problem.input_dim)), np.empty((0, problem.input_dim)),
                                   np.empty(0))
        colloc = problem.scale(grid.interior) if len(grid.interior) else np.empty((0, problem.input_dim))
        ic = problem.scale(grid.boundary) if len(grid.boundary) else np.empty((0, problem.input_dim))
        if data_x.shape[0] == 0 and colloc.shape[0] == 0 and ic.shape[0] == 0:
            raise ConfigurationError("empty dataset and empty collocation grid")
        self.inputs = np.vstack([colloc, data_x, ic])
        n_c, n_d = colloc.shape[0], data_x.shape[0]
        self._colloc = slice(0, n_c)
        self._data = slice(n_c, n_c + n_d)
        self._ic = slice(n_c + n_d, self.inputs.shape[0])
        self.data_obs = data_y
        self.ic_values = np.asarray(grid.boundary_values, dtype=np.float64).reshape(-1)
        self.directions = tuple(range(problem.input_dim)) if n_c else ()
        self.last_terms: LossTerms | None = None

    def _residual(self, y, tangents, beta):
        """Residual and its partials w.r.t. (output, each tangent, beta)."""
        p = self.problem
        if isinstance(p, LogisticProblem):
            b = beta if p.inverse_mode else p.beta
            t_scale = p.time_scale
            r = tangents[0] / t_scale - b * y * (1.0 - y)
            dr_dy = -b * (1.0 - 2.0 * y)
            dr_dtan = np.stack([np.full_like(y, 1.0 / t_scale)])
            dr_dbeta = -y * (1.0 - y) if p.inverse_mode else None
            return r, dr_dy, dr_dtan, dr_dbeta
        fp = flux_derivative(y)
        r = tangents[0] - fp * tangents[1]
        dr_dy = -flux_second_derivative(y) * tangents[1]
        dr_dtan = np.stack([np.ones_like(y), -fp])
        return r, dr_dy, dr_dtan, None

    def _closure(self, y, tangents, beta):
        w = self.weights
        g_y = np.zeros_like(y)
        g_tan = np.zeros_like(tangents) if tangents.size else None
        g_beta = 0.0
        phys = data = ic = 0.0

        yc = y[self._colloc]
        if yc.size:
            r, dr_dy, dr_dtan, dr_dbeta = self._residual(yc, tangents[:, self._colloc], beta)
            phys = float(np.mean(r * r))
            gr = w.physics * 2.0 * r / r.size
            g_y[self._colloc] += gr * dr_dy
            g_tan[:, self._colloc] += gr * dr_dtan
            if dr_dbeta is not None:
                g_beta += float(gr @ dr_dbeta)

        yd = y[self._data]
        if yd.size:
            e = yd - self.data_obs
            data = float(np.mean(e * e))
            g_y[self._data] += w.data * 2.0 * e / e.size

        yi = y[self._ic]
        if yi.size:
            e = yi - self.ic_values
            ic = float(np.mean(e * e))
            g_y[self._ic] += w.ic * 2.0 * e / e.size

        total = w.data * data + w.physics * phys + w.ic * ic
        self.last_terms = LossTerms(total, data, phys, ic)
        return total, g_y, g_tan, g_beta

    def gradients(self, model: MlpModel) -> net.Gradients:
        return net.grad_params(model, self.inputs, self._closure, self.directions)

    def __call__(self, model: MlpModel):
        g = self.gradients(model)
        return g.loss, g.to_vector()

    def terms(self, model: MlpModel) -> LossTerms:
        self.gradients(model)
        return self.last_terms


def pinn_loss(model: MlpModel, problem, data_inputs, data_obs, grid: CollocationGrid | None,
              weights: LossWeights = LossWeights()) -> LossTerms:
    """Loss value with its three components reported separately."""
    return PinnObjective(problem, data_inputs, data_obs, grid, weights).terms(model)
