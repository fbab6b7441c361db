"""Euler-Maruyama simulation of first exit times from Omega.

Each trajectory ``i`` draws from its own ``PCG64`` stream keyed by
``SeedSequence(seed, spawn_key=(i,))``, so exit times are reproducible per
index and independent of how trajectories are split across worker threads.
The stepping loop is compiled with numba from the problem's expressions.
"""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from .expr import add, neg, to_source
from .wellspec import ProblemSpec

logger = logging.getLogger(__name__)

REFINEMENTS = ("interpolate", "brownian-bridge")
_DIVERGED = -1.0


class MCError(RuntimeError):
    pass


class AllCensoredError(MCError):
    def __init__(self, message, recommended_max_steps):
        self.recommended_max_steps = int(recommended_max_steps)
        super().__init__(message)


class InsufficientSamplesError(MCError):
    pass


@dataclass
class MCConfig:
    h: float
    dt: float
    n: int
    x: np.ndarray | None = None  # start point; None means the well bottom x0
    seed: int = 0
    refinement: str = "interpolate"
    max_steps: int | None = None  # None means 10**9 // n

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        self.n = int(self.n)
        if self.refinement not in REFINEMENTS:
            raise ValueError(f"refinement must be one of {REFINEMENTS}")
        if self.max_steps is None:
            self.max_steps = max(1, 10**9 // self.n)
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        self.max_steps = int(self.max_steps)
        if self.x is not None:
            self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        self.seed = int(self.seed)

    def to_json(self) -> dict:
        return {
            "h": self.h,
            "dt": self.dt,
            "n": self.n,
            "x": None if self.x is None else self.x.tolist(),
            "seed": self.seed,
            "refinement": self.refinement,
            "max_steps": self.max_steps,
        }


@dataclass
class KSResult:
    statistic: float
    critical_value: float
    p_value: float
    n: int
    rate: float

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical_value

    def to_json(self) -> dict:
        return {
            "statistic": self.statistic,
            "critical_value_1pct": self.critical_value,
            "p_value": self.p_value,
            "n": self.n,
            "rate": self.rate,
            "passed": self.passed,
        }


@dataclass
class MCResult:
    exit_times: np.ndarray  # NaN where censored
    config: MCConfig
    start: np.ndarray
    ks: KSResult | None = field(default=None)

    @property
    def censored_mask(self) -> np.ndarray:
        return np.isnan(self.exit_times)

    @property
    def censored(self) -> int:
        return int(self.censored_mask.sum())

    @property
    def observed(self) -> np.ndarray:
        return self.exit_times[~self.censored_mask]

    @property
    def mean(self) -> float:
        obs = self.observed
        return float(np.mean(obs)) if obs.size else float("nan")

    @property
    def std(self) -> float:
        obs = self.observed
        return float(np.std(obs, ddof=1)) if obs.size > 1 else float("nan")

    @property
    def stderr(self) -> float:
        m = self.observed.size
        return self.std / math.sqrt(m) if m > 1 else float("nan")

    def summary(self) -> dict:
        out = {
            "mean": self.mean,
            "stderr": self.stderr,
            "std": self.std,
            "n": self.config.n,
            "censored": self.censored,
            "start": self.start.tolist(),
            "config": self.config.to_json(),
        }
        if self.ks is not None:
            out["exponentiality"] = self.ks.to_json()
        return out


# -- kernel generation ----------------------------------------------------

_KERNELS: dict[str, object] = {}


def _scalar_source(e, prefix: str) -> str:
    src = to_source(e, module="math", arg="x")
    return re.sub(r"\bx\[(\d+)\]", lambda m: f"{prefix}{m.group(1)}", src)


def _kernel_source(spec: ProblemSpec) -> str:
    d = spec.dimension
    drift = [neg(add(spec.f.grad_exprs[i], spec.ell.components[i])) for i in range(d)]
    g = spec.domain.g
    grad_g = g.grad_exprs
    ind = " " * 8

    def gnorm(prefix):
        terms = " + ".join(f"({_scalar_source(e, prefix)}) ** 2" for e in grad_g)
        return f"math.sqrt({terms})"

    lines = ["def kernel(rng, start, h, dt, max_steps, bridge):"]
    lines += [f"    x{i} = start[{i}]" for i in range(d)]
    lines.append("    sq = math.sqrt(h * dt)")
    lines.append(f"    g_old = {_scalar_source(g.expression, 'x')}")
    lines.append(f"    gn_old = {gnorm('x')} if bridge else 1.0")
    lines.append("    for step in range(max_steps):")
    for i in range(d):
        lines.append(f"{ind}y{i} = x{i} + ({_scalar_source(drift[i], 'x')}) * dt + sq * rng.standard_normal()")
    lines.append(f"{ind}g_new = {_scalar_source(g.expression, 'y')}")
    lines.append(f"{ind}if g_new >= 0.0:")
    lines.append(f"{ind}    return (step - g_old / (g_new - g_old)) * dt")
    lines.append(f"{ind}if not math.isfinite(g_new):")
    lines.append(f"{ind}    return {_DIVERGED}")
    lines.append(f"{ind}if bridge:")
    lines.append(f"{ind}    gn_new = {gnorm('y')}")
    lines.append(f"{ind}    d_old = -g_old / gn_old")
    lines.append(f"{ind}    d_new = -g_new / gn_new")
    # probability that the Brownian bridge touched the (locally flat) boundary
    lines.append(f"{ind}    if rng.random() < math.exp(-2.0 * d_old * d_new / (h * dt)):")
    lines.append(f"{ind}        return (step + d_old / (d_old + d_new)) * dt")
    lines.append(f"{ind}    gn_old = gn_new")
    lines += [f"{ind}x{i} = y{i}" for i in range(d)]
    lines.append(f"{ind}g_old = g_new")
    lines.append("    return math.nan")
    return "\n".join(lines) + "\n"


def compile_kernel(spec: ProblemSpec):
    """numba-compiled single-trajectory stepper for ``spec`` (cached by source)."""
    src = _kernel_source(spec)
    kernel = _KERNELS.get(src)
    if kernel is None:
        namespace = {"math": math}
        exec(compile(src, "<mc-kernel>", "exec"), namespace)
        kernel = numba.njit(nogil=True, error_model="numpy")(namespace["kernel"])
        _KERNELS[src] = kernel
    return kernel


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


# -- simulation -------------------------------------------------------------


def _recommended_steps(spec: ProblemSpec, cfg: MCConfig) -> int:
    from .kramers import PrefactorError, compute_prefactor, predict_mean_exit_time

    try:
        pred = predict_mean_exit_time(compute_prefactor(spec, verify=False), cfg.h)
    except (PrefactorError, ArithmeticError, ValueError):
        pred = math.inf
    if math.isfinite(pred):
        # ten predicted means leave an exp(-10) censoring fraction
        return int(math.ceil(10.0 * pred / cfg.dt))
    return 10 * cfg.max_steps


def simulate_exit(
    spec: ProblemSpec, cfg: MCConfig, workers: int = 1, rate: float | None = None
) -> MCResult:
    """Simulate ``cfg.n`` trajectories of ``dX = b dt + sqrt(h) dB`` until they leave Omega.

    ``workers`` threads share the trajectories; the result does not depend on
    it. When ``rate`` is given the exponentiality test against it is attached.
    """
    start = spec.minimum.x0 if cfg.x is None else cfg.x
    start = np.ascontiguousarray(start, dtype=float).reshape(spec.dimension)
    if not spec.domain.contains(start):
        raise ValueError(f"start point {start.tolist()} is not inside the domain")
    kernel = compile_kernel(spec)
    bridge = cfg.refinement == "brownian-bridge"
    times = np.empty(cfg.n)

    def run(indices):
        for i in indices:
            times[i] = kernel(trajectory_rng(cfg.seed, i), start, cfg.h, cfg.dt, cfg.max_steps, bridge)

    workers = max(1, int(workers))
    if workers == 1:
        run(range(cfg.n))
    else:
        chunks = [range(k, cfg.n, workers) for k in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))

    if np.any(times == _DIVERGED):
        raise MCError("trajectory produced non-finite values; reduce dt")
    result = MCResult(exit_times=times, config=cfg, start=start)
    if result.censored == cfg.n:
        rec = _recommended_steps(spec, cfg)
        raise AllCensoredError(
            f"all {cfg.n} trajectories hit max_steps={cfg.max_steps} (dt*max_steps="
            f"{cfg.dt * cfg.max_steps:.3g}); use max_steps >= {rec}",
            rec,
        )
    if result.censored:
        logger.warning("%d of %d trajectories censored at max_steps", result.censored, cfg.n)
    if rate is not None:
        result.ks = exponentiality_test(result, rate)
    return result


def exponentiality_test(result: MCResult | np.ndarray, rate: float, min_samples: int = 100) -> KSResult:
    """Kolmogorov-Smirnov distance of ``rate * tau`` from Exp(1).

    Passes at the 1% level when the distance is below ``1.628 / sqrt(m)``.
    Accepts an :class:`MCResult` (censored runs dropped) or a raw sample array.
    """
    sample = result.observed if isinstance(result, MCResult) else np.asarray(result, dtype=float)
    sample = sample[np.isfinite(sample)]
    m = sample.size
    if m < min_samples:
        raise InsufficientSamplesError(f"need at least {min_samples} uncensored samples, got {m}")
    if not rate > 0:
        raise ValueError("rate must be positive")
    ks = stats.kstest(rate * sample, "expon")
    return KSResult(
        statistic=float(ks.statistic),
        critical_value=1.628 / math.sqrt(m),
        p_value=float(ks.pvalue),
        n=m,
        rate=float(rate),
    )
