"""Objective, gradient, and nonlinear conjugate gradient solver.

The objective is

    f(x) = ||P F C M(x) - y||^2 + lam * sum_ch w_ch^2 ||x_ch - z_ch||^2

with per-channel scale factors w from :class:`ChannelScaling` (unit by
default). The solver is Polak-Ribiere+ with restarts and Armijo
backtracking; search directions live in w-scaled coordinates, which
acts as a diagonal preconditioner and makes runs on magnetization-
rescaled data follow corresponding trajectories. Sufficient decrease is
tested at the projected trial point (R clamped to [0, r_max]), so the
objective trace is nonincreasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datatypes import (
    UNIT_SCALING,
    AcquisitionProtocol,
    ChannelScaling,
    CoilMaps,
    KSpaceData,
    ParameterState,
    SamplingMask,
)
from .encoding import encode_adjoint_linear, encode_linear
from .exceptions import ConfigError, NumericalError
from .signal_model import model_forward, model_jacobian_adjoint


@dataclass
class ObjectiveConfig:
    lam: float = 0.0
    z: ParameterState | None = None
    r_max: float = 1.0
    scaling: ChannelScaling = UNIT_SCALING

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.lam > 0 and self.z is None:
            raise ConfigError("a prior state z is required when lam > 0")


@dataclass
class NlcgConfig:
    max_iters: int = 100
    grad_tol: float = 1e-9
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 40
    initial_step: float = 1.0

    def __post_init__(self):
        if not 0 < self.backtrack_factor < 1:
            raise ConfigError(f"backtrack_factor must be in (0, 1), got {self.backtrack_factor}")
        if not 0 < self.armijo_c < 1:
            raise ConfigError(f"armijo_c must be in (0, 1), got {self.armijo_c}")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")


@dataclass
class NlcgReport:
    objective_trace: list = field(default_factory=list)
    final_grad_norm: float = 0.0
    iterations_run: int = 0
    backtrack_failures: int = 0


def _check_objective_inputs(
    x: ParameterState, y: KSpaceData, c: CoilMaps, p: SamplingMask, cfg: ObjectiveConfig
) -> None:
    if cfg.lam > 0 and cfg.z is not None and cfg.z.shape != x.shape:
        raise ConfigError(f"z shape {cfg.z.shape} != state shape {x.shape}")
    if x.shape != c.grid:
        raise ConfigError(f"state grid {x.shape} != coil grid {c.grid}")


def _penalty_and_grad(x_stack: np.ndarray, cfg: ObjectiveConfig, want_grad: bool):
    if cfg.lam == 0 or cfg.z is None:
        return 0.0, None
    w2 = cfg.scaling.as_array() ** 2
    diff = x_stack - cfg.z.stack()
    value = cfg.lam * float(np.sum(w2 * diff * diff))
    grad = 2.0 * cfg.lam * w2 * diff if want_grad else None
    return value, grad


def objective(
    x: ParameterState,
    y: KSpaceData,
    protocol: AcquisitionProtocol,
    c: CoilMaps,
    p: SamplingMask,
    cfg: ObjectiveConfig,
) -> float:
    """Value of the data-consistency objective at x."""
    _check_objective_inputs(x, y, c, p, cfg)
    residual = encode_linear(model_forward(x, protocol), c, p) - y.samples
    value = float(np.sum(residual.real**2 + residual.imag**2))
    penalty, _ = _penalty_and_grad(x.stack(), cfg, want_grad=False)
    return value + penalty


def gradient(
    x: ParameterState,
    y: KSpaceData,
    protocol: AcquisitionProtocol,
    c: CoilMaps,
    p: SamplingMask,
    cfg: ObjectiveConfig,
) -> ParameterState:
    """Gradient of the objective with respect to (Mx, My, R)."""
    _check_objective_inputs(x, y, c, p, cfg)
    residual = encode_linear(model_forward(x, protocol), c, p) - y.samples
    back = encode_adjoint_linear(residual, c, p)
    g = model_jacobian_adjoint(x, protocol, back).stack()
    _, pen_grad = _penalty_and_grad(x.stack(), cfg, want_grad=True)
    if pen_grad is not None:
        g = g + pen_grad
    return ParameterState.from_stack(g)


class _Objective:
    """Shared forward/adjoint evaluation on stacked (3, ny, nx) states."""

    def __init__(self, y, protocol, c, p, cfg: ObjectiveConfig):
        self.y = y.samples
        self.protocol = protocol
        self.c = c
        self.p = p
        self.cfg = cfg
        self.z_stack = cfg.z.stack() if cfg.z is not None else None
        self.w2 = cfg.scaling.as_array() ** 2

    def value_and_residual(self, x_stack: np.ndarray):
        x = ParameterState.from_stack(x_stack)
        residual = encode_linear(model_forward(x, self.protocol), self.c, self.p) - self.y
        value = float(np.sum(residual.real**2 + residual.imag**2))
        if self.cfg.lam > 0:
            diff = x_stack - self.z_stack
            value += self.cfg.lam * float(np.sum(self.w2 * diff * diff))
        return value, residual

    def grad(self, x_stack: np.ndarray, residual: np.ndarray) -> np.ndarray:
        x = ParameterState.from_stack(x_stack)
        back = encode_adjoint_linear(residual, self.c, self.p)
        g = model_jacobian_adjoint(x, self.protocol, back).stack()
        if self.cfg.lam > 0:
            g = g + 2.0 * self.cfg.lam * self.w2 * (x_stack - self.z_stack)
        return g


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a.ravel(), b.ravel()))


def pr_plus_beta(g_new: np.ndarray, g_old: np.ndarray) -> float:
    """Polak-Ribiere+ coefficient max(0, <g+, g+ - g> / <g, g>)."""
    denom = _dot(g_old, g_old)
    if denom == 0.0:
        return 0.0
    return max(0.0, _dot(g_new, g_new - g_old) / denom)


def nlcg_minimize(
    x0: ParameterState,
    y: KSpaceData,
    protocol: AcquisitionProtocol,
    c: CoilMaps,
    p: SamplingMask,
    obj_cfg: ObjectiveConfig,
    nlcg_cfg: NlcgConfig,
) -> tuple[ParameterState, NlcgReport]:
    """Minimize the objective by Polak-Ribiere+ NLCG with Armijo steps.

    Returns the final state (R clamped to [0, r_max]) and a report whose
    objective trace is nonincreasing. Line-search exhaustion terminates
    the run gracefully and is counted in the report rather than raised.
    """
    _check_objective_inputs(x0, y, c, p, obj_cfg)
    prob = _Objective(y, protocol, c, p, obj_cfg)
    w = obj_cfg.scaling.as_array()

    def project(x_stack: np.ndarray) -> np.ndarray:
        out = x_stack.copy()
        np.clip(out[2], 0.0, obj_cfg.r_max, out=out[2])
        return out

    x = project(x0.stack())
    f, residual = prob.value_and_residual(x)
    if not np.isfinite(f):
        raise NumericalError("objective is non-finite at the starting point")
    g = prob.grad(x, residual) / w
    g0_norm = float(np.linalg.norm(g))
    if g0_norm == 0.0:
        return ParameterState.from_stack(x), NlcgReport([], 0.0, 0, 0)

    report = NlcgReport(objective_trace=[f])
    d = -g
    alpha_next = nlcg_cfg.initial_step / g0_norm
    g_norm = g0_norm

    for _ in range(nlcg_cfg.max_iters):
        if _dot(d, g) >= 0:
            d = -g
        alpha = alpha_next
        accepted = False
        for _bt in range(nlcg_cfg.max_backtracks + 1):
            x_trial = project(x + alpha * (d / w))
            f_trial, residual_trial = prob.value_and_residual(x_trial)
            slope = _dot(g, w * (x_trial - x))
            if np.isfinite(f_trial):
                # projection can bend the step, so demand plain decrease
                # whenever the realized move is not a descent direction
                if slope < 0:
                    accepted = f_trial <= f + nlcg_cfg.armijo_c * slope
                else:
                    accepted = f_trial < f
            if accepted:
                break
            alpha *= nlcg_cfg.backtrack_factor
        if not accepted:
            report.backtrack_failures += 1
            break

        g_new = prob.grad(x_trial, residual_trial) / w
        beta = pr_plus_beta(g_new, g)
        d = -g_new + beta * d
        x, f, g = x_trial, f_trial, g_new
        report.objective_trace.append(f)
        report.iterations_run += 1
        alpha_next = alpha / nlcg_cfg.backtrack_factor
        g_norm = float(np.linalg.norm(g))
        if g_norm <= nlcg_cfg.grad_tol * g0_norm:
            break

    report.final_grad_norm = g_norm
    return ParameterState.from_stack(x), report
