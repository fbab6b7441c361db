"""The relaxation flow ``dpsi/dt = -(grad f - ell)(psi)`` and quantities built on it.

Along the flow we accumulate ``int_0^inf div(ell)(psi_t(x)) dt``, which gives
both the non-Gibbsian factor attached to each saddle point and the leading
order ``R0`` of the stationary density shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import EvaluationError, is_const, sub, to_source
from .wellspec import ProblemSpec


class FlowError(RuntimeError):
    pass


class FlowNonConvergenceError(FlowError):
    """``t_max`` reached before the trajectory settled at ``x0``."""

    def __init__(self, message, trajectory=None):
        self.trajectory = trajectory
        super().__init__(message)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_LOW


def _augmented_rhs(spec: ProblemSpec):
    """Fused scalar evaluator for ``(-(grad f - ell), div ell)``."""
    d = spec.dimension
    exprs = [sub(spec.ell.components[i], spec.f.grad_exprs[i]) for i in range(d)]
    exprs.append(spec.ell.div.expression)
    body = ", ".join(to_source(e, module="math", arg="y") for e in exprs)
    raw = eval(compile(f"lambda y: ({body},)", "<flow-rhs>", "eval"), {"math": math})

    def rhs(y):
        try:
            return np.array(raw(y))
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise EvaluationError(str(exc), y[:d]) from None

    return rhs


@dataclass
class FlowTrajectory:
    times: np.ndarray
    states: np.ndarray  # shape (n, d)
    integral: np.ndarray  # running int div(ell) dt, shape (n,)
    terminal_time: float
    terminal_distance: float
    n_accepted: int
    n_rejected: int
    integral_error: float  # sum of local error estimates of the integral component
    converged: bool

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]


def _run(spec, start, x0, t_end, eps_x, eps_tail, t_max, tol, record=True):
    d = spec.dimension
    rhs = _augmented_rhs(spec)
    y = np.concatenate([np.asarray(start, dtype=float).reshape(d), [0.0]])
    t = 0.0
    times, states = [0.0], [y.copy()]
    n_acc = n_rej = 0
    err_int = 0.0
    last_dI = math.inf

    def dist(v):
        return float(np.linalg.norm(v[:d] - x0)) if x0 is not None else math.inf

    if t_end is None and dist(y) <= eps_x:
        traj = FlowTrajectory(np.array(times), np.array(states)[:, :d], np.zeros(1), 0.0, dist(y), 0, 0, 0.0, True)
        return traj
    k1 = rhs(y)
    scale0 = float(np.max(np.abs(k1[:d]))) + 1e-300
    step = min(0.01 / scale0 if scale0 > 1e-12 else 0.01, 0.1)
    horizon = t_end if t_end is not None else t_max
    K = np.empty((7, d + 1))
    converged = False
    while True:
        if t >= horizon * (1 - 1e-15) and t_end is not None:
            converged = True
            break
        if t >= t_max:
            break
        step = min(step, horizon - t)
        K[0] = k1
        for s in range(1, 7):
            K[s] = rhs(y + step * (np.asarray(_A[s]) @ K[:s]))
        y_new = y + step * (_B[:6] @ K[:6])
        err = step * (_E @ K)
        sc = tol + tol * np.maximum(np.abs(y), np.abs(y_new))
        enorm = float(np.sqrt(np.mean((err / sc) ** 2)))
        if enorm <= 1.0:
            t += step
            last_dI = abs(y_new[d] - y[d])
            err_int += abs(err[d])
            y = y_new
            k1 = K[6]  # first-same-as-last
            n_acc += 1
            if record:
                times.append(t)
                states.append(y.copy())
            fac = 5.0 if enorm == 0 else min(5.0, 0.9 * enorm ** (-0.2))
            step *= fac
            if t_end is None and dist(y) <= eps_x and last_dI <= eps_tail:
                converged = True
                break
        else:
            n_rej += 1
            step *= max(0.2, 0.9 * enorm ** (-0.2))
            if step < 1e-14 * max(1.0, t):
                raise FlowError(f"step size underflow at t={t:.6g}")
    if not record:
        times.append(t)
        states.append(y.copy())
    S = np.array(states)
    return FlowTrajectory(
        times=np.array(times),
        states=S[:, :d],
        integral=S[:, d],
        terminal_time=t,
        terminal_distance=dist(y),
        n_accepted=n_acc,
        n_rejected=n_rej,
        integral_error=err_int,
        converged=converged,
    )


def integrate_flow(
    spec: ProblemSpec,
    start,
    t_end: float | None = None,
    eps_x: float | None = None,
    t_max: float | None = None,
    tol: float | None = None,
    record: bool = True,
) -> FlowTrajectory:
    """Integrate the relaxation flow from ``start``.

    Without ``t_end`` the run stops once the trajectory is within ``eps_x`` of
    ``x0`` (and raises :class:`FlowNonConvergenceError` if ``t_max`` comes
    first). With ``t_end`` it stops exactly at that time.
    """
    opts = spec.options
    eps_x = opts.eps_x if eps_x is None else eps_x
    t_max = opts.t_max if t_max is None else t_max
    tol = opts.ode_tol if tol is None else tol
    x0 = spec.minimum.x0 if t_end is None else None
    traj = _run(spec, start, x0, t_end, eps_x, opts.eps_tail, t_max, tol, record=record)
    if not traj.converged:
        raise FlowNonConvergenceError(
            f"flow from {np.asarray(start).tolist()} did not reach x0 within t_max={t_max} "
            f"(distance {traj.terminal_distance:.3e}); start may lie outside the basin",
            traj,
        )
    return traj


def flow_map(spec: ProblemSpec, start, t: float, tol: float | None = None) -> np.ndarray:
    """``psi_t(start)``."""
    if t == 0:
        return np.asarray(start, dtype=float).copy()
    return integrate_flow(spec, start, t_end=t, tol=tol, record=False).end


@dataclass
class DivergenceIntegral:
    value: float
    tail: float
    error: float
    terminal_time: float
    decay_rate: float
    status: str = "ok"  # "ok" | "warn"
    trajectory: FlowTrajectory | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "tail_estimate": self.tail,
            "error": self.error,
            "terminal_time": self.terminal_time,
            "decay_rate": self.decay_rate,
            "status": self.status,
        }


def _decay_rate(traj: FlowTrajectory, x0) -> float:
    """Exponential decay rate of ``|psi_t - x0|`` over the last quarter of the run."""
    r = np.linalg.norm(traj.states - x0, axis=1)
    t = traj.times
    T = t[-1]
    mask = (t >= 0.75 * T) & (r > 0)
    if mask.sum() < 3:
        return float("nan")
    tw, rw = t[mask], np.log(r[mask])
    if np.any(np.diff(rw) > 0):
        return float("nan")
    slope = np.polyfit(tw, rw, 1)[0]
    return float(-slope)


def divergence_integral(spec: ProblemSpec, z, eps_x: float | None = None) -> DivergenceIntegral:
    """``int_0^inf div(ell)(psi_t(z)) dt`` with an error bound.

    The integral rides along the flow as an extra ODE coordinate. The
    neglected tail beyond the terminal time is estimated as
    ``|div ell(psi_T)| / rate`` and only enters the error bound.
    """
    if is_const(spec.ell.div.expression, 0.0):
        return DivergenceIntegral(0.0, 0.0, 0.0, 0.0, float("inf"))
    x0 = spec.minimum.x0
    traj = integrate_flow(spec, z, eps_x=eps_x)
    value = float(traj.integral[-1]) if traj.integral.size else 0.0
    div_end = abs(float(spec.ell.div(traj.end)))
    rate = _decay_rate(traj, x0) if traj.n_accepted else float("inf")
    status = "ok"
    if np.isfinite(rate) and rate > 0:
        tail = float(div_end / rate)
    else:
        # non-monotone tail: fall back to a crude bound
        status = "warn"
        tail = div_end * max(traj.terminal_time, 1.0)
    tol = spec.options.ode_tol
    error = float(tail + traj.integral_error + tol * (1.0 + abs(value)))
    return DivergenceIntegral(value, tail, error, traj.terminal_time, rate, status, traj)


def normalization_constant(spec: ProblemSpec) -> float:
    """``c0 = |det Hess f(x0)|^(1/2) pi^(-d/2)``."""
    H = spec.minimum.hessian
    return math.sqrt(abs(float(np.linalg.det(H)))) * math.pi ** (-spec.dimension / 2)


def r0(spec: ProblemSpec, x, return_error: bool = False):
    """Leading-order stationary density shape ``R0(x) = c0 exp(int div ell(psi_t(x)) dt)``."""
    c0 = normalization_constant(spec)
    di = divergence_integral(spec, x)
    value = c0 * math.exp(di.value)
    if return_error:
        return value, value * (math.expm1(di.error))
    return value


def r0_transport_residual(spec: ProblemSpec, x, step: float | None = None) -> float:
    """Normalized residual of ``-(grad f - ell).grad R0 + R0 div ell`` at ``x``.

    ``grad R0`` comes from central differences of :func:`r0`.
    """
    x = np.asarray(x, dtype=float)
    d = spec.dimension
    if step is None:
        step = 1e-4 * max(1.0, float(np.max(np.abs(spec.domain.bbox))))
    R = r0(spec, x)
    grad = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        grad[i] = (r0(spec, x + e) - r0(spec, x - e)) / (2 * step)
    v = spec.psi_field(x)  # -(grad f - ell)
    divl = float(spec.ell.div(x))
    num = abs(float(v @ grad) + R * divl)
    den = abs(R * divl) + float(np.linalg.norm(v)) * float(np.linalg.norm(grad)) + 1e-14
    return num / den
