"""Least-squares estimation of the parametric channel coefficients."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel import AMP_BOUNDS, EXP_BOUNDS, link_distance, parametric_jacobian, parametric_response
from .geometry import SystemParams

log = logging.getLogger(__name__)

DEFAULT_GUESS = (1.0, 0.5, 0.5)
DEFAULT_BOUNDS = (AMP_BOUNDS, EXP_BOUNDS, EXP_BOUNDS)
N_RESTARTS = 5


class DegenerateCurveError(ValueError):
    """The curve carries no signal, so the amplitude is unidentifiable."""


@dataclass
class FitProblem:
    time_grid: np.ndarray
    values: np.ndarray
    model_kind: int  # 11 or 21
    sys: SystemParams
    initial_guess: tuple = DEFAULT_GUESS
    bounds: tuple = DEFAULT_BOUNDS
    max_iterations: int = 500
    tolerance: float = 1e-10
    restart_seed: int = 0

    def __post_init__(self):
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        link_distance(self.sys, self.model_kind)
        if self.time_grid.shape != self.values.shape or self.time_grid.size < 10:
            raise ValueError("curve must have at least 10 samples on a matching grid")
        lo, hi = self.lower, self.upper
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)) or np.any(lo >= hi):
            raise ValueError("bounds must be finite with lo < hi")
        g = np.asarray(self.initial_guess, dtype=float)
        if g.shape != (3,) or np.any(g < lo) or np.any(g > hi):
            raise ValueError("initial guess must be a 3-vector within bounds")

    @classmethod
    def from_curve(cls, curve, model_kind, sys, **kw):
        return cls(curve.time_grid, curve.mean_fraction, model_kind, sys, **kw)

    @property
    def lower(self):
        return np.array([b[0] for b in self.bounds], dtype=float)

    @property
    def upper(self):
        return np.array([b[1] for b in self.bounds], dtype=float)

    def _args(self):
        return link_distance(self.sys, self.model_kind), self.sys.R, self.sys.D

    def residual(self, b):
        return parametric_response(self.time_grid, *b, *self._args()) - self.values

    def jacobian(self, b):
        return parametric_jacobian(self.time_grid, *b, *self._args())


@dataclass
class FitResult:
    params: np.ndarray
    rss: float
    rmse: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    restarts: int = 0


def levenberg_marquardt(residual: Callable, jacobian: Callable, x0, lower, upper,
                        max_iterations=500, tolerance=1e-10):
    """Bounded Levenberg-Marquardt with Marquardt diagonal scaling.

    Steps are projected onto the box.  A step is accepted only if it lowers
    the residual sum of squares, so the accepted sequence (``history``) is
    nonincreasing.  Converged means the relative decrease of an accepted step
    fell below ``tolerance``, or no decreasing step exists at any damping
    (a stationary point at working precision).  A vanishing Jacobian is
    reported as not converged.

    Returns ``(x, cost, iterations, converged, history)``.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    r = residual(x)
    cost = float(r @ r)
    history = [cost]
    lam = 1e-3
    converged = False
    it = 0
    while it < max_iterations:
        it += 1
        if cost == 0.0:
            converged = True
            break
        J = jacobian(x)
        if not np.any(np.abs(J) > 1e-12):
            # saturated model (erfc underflow): flat, but not a minimum
            break
        g = J.T @ r
        # variables pinned at a bound with the descent direction pointing out stay fixed
        free = ~(((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0)))
        if not free.any():
            converged = True
            break
        Jf = J[:, free]
        A = Jf.T @ Jf
        gf = g[free]
        diag = np.maximum(np.diag(A), 1e-12 * max(1.0, np.max(np.diag(A))))
        accepted = False
        while lam < 1e16:
            try:
                step_f = np.linalg.solve(A + lam * np.diag(diag), -gf)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            step = np.zeros_like(x)
            step[free] = step_f
            x_new = np.clip(x + step, lower, upper)
            r_new = residual(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        rel = (cost - cost_new) / cost
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 10.0, 1e-12)
        if rel < tolerance:
            converged = True
            break
    return x, cost, it, converged, history


def _single_fit(problem: FitProblem, x0):
    return levenberg_marquardt(problem.residual, problem.jacobian, x0, problem.lower,
                               problem.upper, problem.max_iterations, problem.tolerance)


def fit_channel(problem: FitProblem) -> FitResult:
    """Fit one cumulative curve, restarting from random points in the box if
    the first run does not converge."""
    if not np.any(problem.values > 0):
        raise DegenerateCurveError("curve is identically zero")
    x, cost, it, conv, hist = _single_fit(problem, problem.initial_guess)
    restarts = 0
    if not conv:
        rng = np.random.default_rng([int(problem.restart_seed), int(problem.model_kind)])
        for _ in range(N_RESTARTS):
            restarts += 1
            start = rng.uniform(problem.lower, problem.upper)
            cand = _single_fit(problem, start)
            if cand[1] < cost:
                x, cost, it, conv, hist = cand
        if not conv:
            log.warning("fit did not converge (model %s, rss %.3g)", problem.model_kind, cost)
    n = problem.values.size
    return FitResult(params=x, rss=cost, rmse=float(np.sqrt(cost / n)), iterations=it,
                     converged=conv, history=hist, restarts=restarts)


DATASET_COLUMNS = ("d", "h", "R", "D", "b1", "b2", "b3", "b4", "b5", "b6",
                   "rmse11", "rmse21", "converged11", "converged21")


@dataclass
class DatasetRow:
    sys: SystemParams
    coeffs: np.ndarray  # b1..b6
    rmse11: float
    rmse21: float
    converged11: bool
    converged21: bool
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and bool(np.all(np.isfinite(self.coeffs)))


@dataclass
class ParamDataset:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def usable(self) -> "ParamDataset":
        return ParamDataset([r for r in self.rows if r.ok])

    def inputs(self):
        return np.array([r.sys.as_tuple() for r in self.rows], dtype=float).reshape(-1, 4)

    def targets(self):
        return np.array([r.coeffs for r in self.rows], dtype=float).reshape(-1, 6)

    def subset(self, indices) -> "ParamDataset":
        return ParamDataset([self.rows[i] for i in indices])


def fit_case(sys: SystemParams, s11, s21, case_index=0) -> DatasetRow:
    """Fit both links of one simulated case; failures are recorded on the row."""
    coeffs = np.full(6, np.nan)
    rmse = [np.nan, np.nan]
    conv = [False, False]
    errors = []
    for slot, (kind, curve) in enumerate(((11, s11), (21, s21))):
        try:
            res = fit_channel(FitProblem.from_curve(curve, kind, sys, restart_seed=case_index))
        except (DegenerateCurveError, ValueError, FloatingPointError) as exc:
            errors.append(f"F{kind}: {exc}")
            continue
        coeffs[3 * slot:3 * slot + 3] = res.params
        rmse[slot] = res.rmse
        conv[slot] = res.converged
    return DatasetRow(sys, coeffs, rmse[0], rmse[1], conv[0], conv[1],
                      "; ".join(errors) or None)


def build_dataset(grid, cfg, workers=1, simulate=None) -> ParamDataset:
    """Simulate and fit every grid case.

    ``simulate(index, sys)`` may be supplied to reuse cached curves; it must
    return ``(S11, S21)``.  By default each case is simulated with a seed
    derived from ``cfg.rng_seed`` and the case parameters.
    """
    from .sim import simulate_channel
    from .workbench import case_config

    grid = list(grid)
    if simulate is None:
        def simulate(i, sys):
            return simulate_channel(sys, case_config(cfg, sys))

    def one(item):
        i, sys = item
        try:
            s11, s21 = simulate(i, sys)
        except Exception as exc:  # per-case failures must not abort the campaign
            return DatasetRow(sys, np.full(6, np.nan), np.nan, np.nan, False, False, repr(exc))
        return fit_case(sys, s11, s21, case_index=i)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, enumerate(grid)))
    else:
        rows = [one(item) for item in enumerate(grid)]
    return ParamDataset(rows)
