"""Variance-minimizing hyperparameters from state evolution.

The objective is the SE-predicted noise variance of AMPR's unbiased
estimate.  It is minimized over (log mu_b, log lam[, logit gamma]) with a
multi-start Nelder-Mead; the non-bootstrap baseline is the same search at
mu_b = inf over (log lam[, logit gamma]).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import InfeasibleDomain, InvalidArgument, InvalidStart
from .scalar_kernels import DenoiserParams
from .state_evolution import SeOptions, run_se, se_variance
from .synthetic_data import SignalPrior

LAMBDA_FLOOR = 1e-7
INTERPOLATOR_LAMBDA = 2e-7


# --------------------------------------------------------------------------
# Nelder-Mead

@dataclass(frozen=True)
class NelderMeadOptions:
    initial_step: float | tuple = 0.5
    xtol: float = 1e-6
    max_iters: int = 500
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5


@dataclass(frozen=True)
class NelderMeadResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool


def _diameter(simplex):
    diffs = simplex[:, None, :] - simplex[None, :, :]
    return float(np.sqrt((diffs ** 2).sum(axis=-1)).max())


def nelder_mead(objective, x0, opts: NelderMeadOptions = NelderMeadOptions()) -> NelderMeadResult:
    """Minimize ``objective`` with the classic simplex method.

    Non-finite objective values are treated as +inf.  Stops when the
    simplex diameter drops below ``opts.xtol`` or after ``opts.max_iters``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dim = x0.size
    if dim not in (1, 2, 3):
        raise InvalidArgument(f"dimension must be 1, 2 or 3, got {dim}")
    step = np.broadcast_to(np.asarray(opts.initial_step, dtype=float), (dim,))
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        val = float(objective(x))
        return val if math.isfinite(val) else math.inf

    simplex = np.vstack([x0] + [x0 + step[i] * np.eye(dim)[i] for i in range(dim)])
    values = np.array([f(v) for v in simplex])
    if not np.any(np.isfinite(values)):
        raise InvalidStart("objective is non-finite at every initial vertex")

    a, g, c, s = opts.reflection, opts.expansion, opts.contraction, opts.shrink
    it = 0
    converged = False
    while it < opts.max_iters:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if _diameter(simplex) < opts.xtol:
            converged = True
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + a * (centroid - worst)
        fr = f(xr)
        if fr < values[0]:
            xe = centroid + g * (xr - centroid)
            fe = f(xe)
            simplex[-1], values[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = centroid + c * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + c * (worst - centroid)
            fc = f(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        best = simplex[0]
        for i in range(1, dim + 1):
            simplex[i] = best + s * (simplex[i] - best)
            values[i] = f(simplex[i])

    order = np.argsort(values, kind="stable")
    return NelderMeadResult(simplex[order[0]].copy(), float(values[order[0]]),
                            it, evals, converged)


# --------------------------------------------------------------------------
# Variance minimization

@dataclass(frozen=True)
class OptDomain:
    """Search box.  ``mu_b_range[1] = inf`` adds the mu_b = inf sub-problem.

    ``gamma`` is a fixed l1-ratio, or None to optimize it too.
    """

    mu_b_range: tuple = (1e-2, math.inf)
    lambda_range: tuple = (LAMBDA_FLOOR, 10.0)
    gamma: float | None = 1.0
    mu_b_finite_cap: float = 1e2
    logit_gamma_range: tuple = (-9.0, 9.0)

    def __post_init__(self):
        lo, hi = self.mu_b_range
        if not (0.0 < lo < hi):
            raise InvalidArgument(f"invalid mu_b_range {self.mu_b_range}")
        if self.lambda_range[0] != LAMBDA_FLOOR or not self.lambda_range[1] > LAMBDA_FLOOR:
            raise InvalidArgument(f"lambda_range must start at {LAMBDA_FLOOR}")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise InvalidArgument("gamma must lie in [0, 1]")

    @property
    def includes_infinite(self) -> bool:
        return math.isinf(self.mu_b_range[1])

    @property
    def mu_b_bounds(self) -> tuple:
        lo, hi = self.mu_b_range
        return lo, (self.mu_b_finite_cap if math.isinf(hi) else hi)


def _logit(p):
    return math.log(p / (1.0 - p))


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


@dataclass(frozen=True)
class _Space:
    """Transformed coordinates and box for one sub-problem."""

    lower: np.ndarray
    upper: np.ndarray
    finite_mu: bool
    gamma: float | None

    def clamp(self, x):
        return np.clip(x, self.lower, self.upper)

    def decode(self, x):
        x = self.clamp(np.asarray(x, dtype=float))
        i = 0
        mu_b = math.inf
        if self.finite_mu:
            mu_b = math.exp(x[0])
            i = 1
        lam = max(math.exp(x[i]), LAMBDA_FLOOR)
        gamma = self.gamma if self.gamma is not None else _sigmoid(x[i + 1])
        return mu_b, lam, gamma


def _space(domain: OptDomain, finite_mu: bool) -> _Space:
    lo, hi = [], []
    if finite_mu:
        mlo, mhi = domain.mu_b_bounds
        lo.append(math.log(mlo))
        hi.append(math.log(mhi))
    lo.append(math.log(domain.lambda_range[0]))
    hi.append(math.log(domain.lambda_range[1]))
    if domain.gamma is None:
        lo.append(domain.logit_gamma_range[0])
        hi.append(domain.logit_gamma_range[1])
    return _Space(np.array(lo), np.array(hi), finite_mu, domain.gamma)


@dataclass(frozen=True)
class Optimum:
    mu_b: float
    lam: float
    gamma: float
    sigma2: float
    converged: bool
    evaluations: int = 0


@dataclass(frozen=True)
class VarianceOptimum:
    """Best bootstrap optimum, non-bootstrap baseline, and each start's result."""

    best: Optimum
    baseline: Optimum
    starts: tuple = field(default=(), repr=False)
    baseline_starts: tuple = field(default=(), repr=False)


PENALTY = 1.0


def se_objective(alpha, delta, prior, space: _Space, se_opts: SeOptions):
    """Objective on transformed coordinates: SE variance, +inf if SE fails."""

    def objective(x):
        x = np.asarray(x, dtype=float)
        mu_b, lam, gamma = space.decode(x)
        try:
            st = run_se(alpha, delta, prior, DenoiserParams(lam, gamma), mu_b, opts=se_opts)
        except (ArithmeticError, RuntimeError, ValueError):
            return math.inf
        if not st.converged:
            return math.inf
        val = se_variance(st)
        if not math.isfinite(val):
            return math.inf
        out = float(np.sum((x - space.clamp(x)) ** 2))
        return val + PENALTY * out

    return objective


def start_points(space: _Space, count: int) -> np.ndarray:
    """Deterministic quasi-random starts; the first k of 2k are the k-set."""
    dim = space.lower.size
    halton = qmc.Halton(d=dim, scramble=False)
    halton.fast_forward(1)
    u = halton.random(count)
    # keep starts off the box faces so the first simplex lies inside
    u = 0.1 + 0.8 * u
    return space.lower + u * (space.upper - space.lower)


def _search(alpha, delta, prior, space, restarts, se_opts, nm_opts):
    objective = se_objective(alpha, delta, prior, space, se_opts)
    step = 0.1 * (space.upper - space.lower)
    results = []
    for x0 in start_points(space, restarts):
        try:
            res = nelder_mead(objective, x0, _with_step(nm_opts, step))
        except InvalidStart:
            results.append(None)
            continue
        mu_b, lam, gamma = space.decode(res.x)
        sigma2 = objective(space.clamp(res.x)) if math.isfinite(res.fun) else math.inf
        results.append(Optimum(mu_b, lam, gamma, sigma2, res.converged, res.evaluations))
    return results


def _with_step(opts: NelderMeadOptions, step) -> NelderMeadOptions:
    return NelderMeadOptions(tuple(float(s) for s in step), opts.xtol, opts.max_iters,
                             opts.reflection, opts.expansion, opts.contraction, opts.shrink)


def best_of(results) -> Optimum | None:
    """Lowest-variance feasible optimum; ties go to the earlier start."""
    best = None
    for r in results:
        if r is not None and math.isfinite(r.sigma2) and (best is None or r.sigma2 < best.sigma2):
            best = r
    return best


def minimize_variance(alpha: float, delta: float, prior: SignalPrior,
                      domain: OptDomain = OptDomain(), restarts: int = 5,
                      se_opts: SeOptions = SeOptions(),
                      nm_opts: NelderMeadOptions = NelderMeadOptions()) -> VarianceOptimum:
    """Optimal (mu_b, lam, gamma) for the SE variance and the mu_b = inf baseline.

    When the domain reaches mu_b = inf, the baseline optimum is itself a
    candidate, so the bootstrap optimum never exceeds the baseline.
    """
    if restarts < 1:
        raise InvalidArgument("restarts must be >= 1")
    finite = _search(alpha, delta, prior, _space(domain, True), restarts, se_opts, nm_opts)
    base = _search(alpha, delta, prior, _space(domain, False), restarts, se_opts, nm_opts)
    baseline = best_of(base)
    candidates = list(finite)
    if domain.includes_infinite:
        candidates.append(baseline)
    best = best_of(candidates)
    if best is None or baseline is None:
        raise InfeasibleDomain(
            f"no feasible SE fixed point for alpha={alpha}, rho={prior.rho}")
    return VarianceOptimum(best, baseline, tuple(finite), tuple(base))


def first_starts(opt: VarianceOptimum, k: int, includes_infinite: bool = True) -> VarianceOptimum:
    """The optimum a run with only ``k`` restarts would have returned.

    Start points are nested (the first k of a longer run are the k-run's
    starts), so this is exact, not an approximation.
    """
    if not 1 <= k <= len(opt.starts):
        raise InvalidArgument(f"k must lie in [1, {len(opt.starts)}]")
    baseline = best_of(opt.baseline_starts[:k])
    candidates = list(opt.starts[:k]) + ([baseline] if includes_infinite else [])
    best = best_of(candidates)
    if best is None or baseline is None:
        raise InfeasibleDomain(f"no feasible start among the first {k}")
    return VarianceOptimum(best, baseline, opt.starts[:k], opt.baseline_starts[:k])


# --------------------------------------------------------------------------
# Phase-diagram sweep

SWEEP_COLUMNS = ("rho", "alpha", "mu_b_star", "lambda_star", "gamma_star",
                 "sigma2_star", "s2_star", "ratio", "unique_frac", "phase_label",
                 "converged")


def unique_fraction(alpha: float, mu_b: float) -> float:
    """Expected distinct samples per bootstrap resample, divided by N."""
    return alpha * -math.expm1(-mu_b) if math.isfinite(mu_b) else alpha


def phase_label(lambda_star: float, unique_frac: float) -> str:
    if lambda_star <= INTERPOLATOR_LAMBDA and unique_frac < 1.0:
        return "interpolator"
    return "regularized"


@dataclass(frozen=True)
class SweepRecord:
    rho: float
    alpha: float
    mu_b_star: float
    lambda_star: float
    gamma_star: float
    sigma2_star: float
    s2_star: float
    ratio: float
    unique_frac: float
    phase_label: str
    converged: bool
    error: str = ""

    @classmethod
    def from_optimum(cls, rho, alpha, opt: VarianceOptimum) -> "SweepRecord":
        b, s = opt.best, opt.baseline
        uf = unique_fraction(alpha, b.mu_b)
        return cls(rho, alpha, b.mu_b, b.lam, b.gamma, b.sigma2, s.sigma2,
                   b.sigma2 / s.sigma2, uf, phase_label(b.lam, uf),
                   b.converged and s.converged)

    @classmethod
    def failed(cls, rho, alpha, message: str) -> "SweepRecord":
        nan = math.nan
        return cls(rho, alpha, nan, nan, nan, nan, nan, nan, nan, "failed", False, message)


@dataclass(frozen=True)
class SweepTask:
    rho: float
    alpha: float
    delta: float
    domain: OptDomain
    restarts: int
    se_opts: SeOptions
    nm_opts: NelderMeadOptions


def run_cell(task: SweepTask) -> tuple[SweepRecord, VarianceOptimum | None]:
    try:
        opt = minimize_variance(task.alpha, task.delta, SignalPrior(task.rho), task.domain,
                                task.restarts, task.se_opts, task.nm_opts)
    except (InfeasibleDomain, InvalidArgument) as exc:
        return SweepRecord.failed(task.rho, task.alpha, str(exc)), None
    return SweepRecord.from_optimum(task.rho, task.alpha, opt), opt


def sweep_cells(rho_grid, alpha_grid, delta: float, domain: OptDomain = OptDomain(),
                restarts: int = 5, se_opts: SeOptions = SeOptions(),
                nm_opts: NelderMeadOptions = NelderMeadOptions(), workers: int = 1):
    """Yield (record, optimum) per cell in rho-major grid order.

    Cells are independent; with ``workers > 1`` they run in a process pool
    and are still yielded in grid order.
    """
    rho_grid, alpha_grid = list(rho_grid), list(alpha_grid)
    if not rho_grid or not alpha_grid:
        raise InvalidArgument("grids must be non-empty")
    tasks = [SweepTask(float(r), float(a), delta, domain, restarts, se_opts, nm_opts)
             for r in rho_grid for a in alpha_grid]
    if workers <= 1:
        for t in tasks:
            yield run_cell(t)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(run_cell, tasks)


def sweep_phase_diagram(rho_grid, alpha_grid, delta: float, domain: OptDomain = OptDomain(),
                        restarts: int = 5, se_opts: SeOptions = SeOptions(),
                        nm_opts: NelderMeadOptions = NelderMeadOptions(),
                        workers: int = 1) -> list[SweepRecord]:
    return [rec for rec, _ in sweep_cells(rho_grid, alpha_grid, delta, domain, restarts,
                                          se_opts, nm_opts, workers)]
