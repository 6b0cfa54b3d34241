"""End-to-end analytic evaluation: grid, stage tables, chain, metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import chain_solver as cs
from .errors import ValidationError
from .model_config import ModelParams, ValidationReport, validate_rule
from .quadrature import Grid, build_grid
from .stage_analysis import RateTables, StageModel, TransmissionTables

__all__ = ["AnalysisResult", "analyze"]


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    params: ModelParams
    grid: Grid
    stage: StageModel
    transmission: TransmissionTables
    rates: RateTables
    kernel: cs.KernelMatrix
    stationary: cs.StationaryDistribution
    direct: cs.StationaryDistribution | None
    doeblin: float
    expectations: cs.Expectations
    metrics: cs.Metrics
    validation: ValidationReport

    @property
    def V_p(self) -> float:
        return self.metrics.V_p

    @property
    def C_p(self) -> float:
        return self.metrics.C_p

    @property
    def solver_gap(self) -> float:
        """Sup-norm gap between power iteration and the direct solve."""
        if self.direct is None:
            return float("nan")
        return float(np.max(np.abs(self.direct.psi - self.stationary.psi)))

    def diagnostics(self) -> dict:
        return {
            "M": self.grid.M,
            "states": self.kernel.n,
            "row_defect": self.kernel.max_defect,
            "rate_defect": float(np.max(self.rates.defect)),
            "doeblin_mass": self.doeblin,
            "residual": self.stationary.residual,
            "iterations": self.stationary.iterations,
            "solver_gap": self.solver_gap,
            "bound_violations": int(sum(self.rates.bounds.values())),
        }


def analyze(params: ModelParams, N: int = 36, L: int = 21, *, curve_resolution: int = 256,
            generic: bool | None = None, cross_check: bool | None = None,
            require_valid: bool = True, progress_tol: float = 1e-3) -> AnalysisResult:
    """Run the analytic pipeline for ``params``.

    Parameters
    ----------
    params : ModelParams
    N, L : int
        Direction count and spatial resolution.
    curve_resolution : int
        Samples per threshold curve.
    generic : bool, optional
        Force the cell-centre route (see :class:`StageModel`).
    cross_check : bool, optional
        Also solve the balance equations directly.  Defaults to True when
        the chain has at most 7000 states.
    require_valid : bool
        Raise :class:`ValidationError` when a rule assumption fails.
    progress_tol : float
        ``C_p`` is undefined when ``|V_p| <= progress_tol * v0``.

    Returns
    -------
    AnalysisResult
    """
    grid = build_grid(params.region, N, L)
    report = validate_rule(params.rule, grid)
    if require_valid and not report.ok:
        names = ", ".join(f"{c.name} ({c.detail})" for c in report.failures())
        raise ValidationError(f"routing rule fails {names}")
    stage = StageModel(params, grid, curve_resolution=curve_resolution, generic=generic)
    tx = stage.transmission_tables()
    rates = stage.rate_tables()
    K = cs.assemble_kernel(rates, tx, grid)
    st = cs.stationary_distribution(K)
    if cross_check is None:
        cross_check = K.n <= cs.DENSE_SOLVE_LIMIT
    direct = cs.direct_solve(K) if cross_check else None
    e = cs.expectations(st, params, rates, grid)
    m = cs.performance_metrics(e, params.v0, progress_tol)
    return AnalysisResult(params, grid, stage, tx, rates, K, st, direct, cs.doeblin_mass(K), e, m,
                          report)
