"""Paired prediction/measurement tables across a list of temperatures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .kramers import PrefactorReport, compute_prefactor, predict_mean_exit_time
from .montecarlo import MCConfig, MCError, simulate_exit
from .pde2d import PDEError, solve_mean_exit_time
from .wellspec import ProblemSpec


@dataclass
class Measurement:
    value: float | None = None
    stderr: float | None = None
    status: str = "skipped"  # "ok" | "skipped" | "error: ..."

    def to_json(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "status": self.status}


@dataclass
class ValidationRow:
    h: float
    predicted: float
    pde: Measurement = field(default_factory=Measurement)
    mc: Measurement = field(default_factory=Measurement)

    @staticmethod
    def _ratio(m: Measurement, pred: float):
        if m.status != "ok" or not pred or not math.isfinite(pred):
            return None
        return m.value / pred

    @property
    def pde_ratio(self):
        return self._ratio(self.pde, self.predicted)

    @property
    def mc_ratio(self):
        return self._ratio(self.mc, self.predicted)

    @property
    def mc_consistent(self):
        """MC mean within three standard errors of the grid value, when both exist."""
        if self.pde.status != "ok" or self.mc.status != "ok":
            return None
        return abs(self.mc.value - self.pde.value) <= 3.0 * self.mc.stderr

    def to_json(self) -> dict:
        return {
            "h": self.h,
            "predicted": self.predicted,
            "pde": self.pde.to_json(),
            "mc": self.mc.to_json(),
            "pde_ratio": self.pde_ratio,
            "mc_ratio": self.mc_ratio,
            "mc_consistent_with_pde": self.mc_consistent,
        }

    CSV_HEADER = ("h", "predicted", "pde", "pde_status", "mc", "mc_stderr", "mc_status", "pde_ratio", "mc_ratio")

    def csv_row(self) -> tuple:
        return (
            self.h, self.predicted, self.pde.value, self.pde.status,
            self.mc.value, self.mc.stderr, self.mc.status, self.pde_ratio, self.mc_ratio,
        )


@dataclass
class ValidationResult:
    rows: list
    prefactor: PrefactorReport

    def _ratios(self, attr):
        pairs = [(r.h, getattr(r, attr)) for r in self.rows]
        return sorted((h, q) for h, q in pairs if q is not None)

    @property
    def trend_toward_one(self):
        """``|ratio - 1|`` shrinks as h decreases (grid ratios, else MC ratios)."""
        pts = self._ratios("pde_ratio") or self._ratios("mc_ratio")
        if len(pts) < 2:
            return None
        dev = [abs(q - 1.0) for _, q in pts]
        return all(a < b for a, b in zip(dev, dev[1:]))

    @property
    def passed(self) -> bool:
        flags = [self.trend_toward_one] + [r.mc_consistent for r in self.rows]
        return all(f is not False for f in flags)

    def to_json(self) -> dict:
        return {
            "kappa0": self.prefactor.kappa0,
            "barrier": self.prefactor.barrier,
            "rows": [r.to_json() for r in self.rows],
            "trend_toward_one": self.trend_toward_one,
            "passed": self.passed,
        }


def run_validation(
    spec: ProblemSpec,
    hs,
    grid: int = 512,
    shortley_weller: bool = True,
    mc_n: int = 0,
    mc_dt: float = 1e-3,
    seed: int = 0,
    bridge: bool = True,
    max_steps: int | None = None,
    workers: int = 1,
) -> ValidationResult:
    """Prediction, grid solution (d <= 2) and optional Monte Carlo mean for each ``h``.

    A failing cell is reported with its status and does not abort the table.
    """
    hs = list(hs)
    if not hs:
        raise ValueError("need at least one temperature h")
    report = compute_prefactor(spec)
    rows = []
    for h in hs:
        row = ValidationRow(h=float(h), predicted=predict_mean_exit_time(report, h))
        if spec.dimension <= 2:
            try:
                sol = solve_mean_exit_time(spec, h, grid, shortley_weller=shortley_weller)
                row.pde = Measurement(sol.value_at(report.x0), None, "ok")
            except PDEError as exc:
                row.pde = Measurement(status=f"error: {exc}")
        if mc_n > 0:
            cfg = MCConfig(
                h=h, dt=mc_dt, n=mc_n, seed=seed,
                refinement="brownian-bridge" if bridge else "interpolate", max_steps=max_steps,
            )
            try:
                res = simulate_exit(spec, cfg, workers=workers)
                row.mc = Measurement(res.mean, res.stderr, "ok")
            except MCError as exc:
                row.mc = Measurement(status=f"error: {exc}")
        rows.append(row)
    return ValidationResult(rows=rows, prefactor=report)
