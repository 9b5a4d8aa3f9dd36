"""Derivative-free maximizers for the state-pair searches.

Population differential evolution (rand/1/bin) is the workhorse; simulated
annealing is the cross-check.  Both are written against a minimization
interface (the searches hand in a loss = -backflow) with box bounds, full
seed determinism, and an evaluation budget.  Parallel and serial runs of the
same seed give bit-identical trajectories because every generation draws its
random numbers before any objective is evaluated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np


@dataclass
class OptProblem:
    """Minimization problem: objective over a box, with a hard evaluation budget."""

    objective: object
    lower: np.ndarray
    upper: np.ndarray
    budget: int = 10000
    seed: int = 0

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape:
            raise ValueError("bound shapes differ")
        if np.any(self.upper < self.lower):
            raise ValueError("upper bound below lower bound")
        if self.budget < 1:
            raise ValueError("budget must be positive")

    @property
    def dim(self):
        return self.lower.size


@dataclass
class OptResult:
    best_x: np.ndarray
    best_value: float
    evaluations: int
    history: list
    seed: int
    converged: bool = True
    meta: dict = field(default_factory=dict)


class _CountedObjective:
    """Wraps the raw objective: counts calls, enforces the budget and the box."""

    def __init__(self, problem: OptProblem):
        self.f = problem.objective
        self.lower = problem.lower
        self.upper = problem.upper
        self.budget = problem.budget
        self.calls = 0

    @property
    def exhausted(self):
        return self.calls >= self.budget

    def __call__(self, x):
        if np.any(x < self.lower - 1e-12) or np.any(x > self.upper + 1e-12):
            raise RuntimeError("optimizer produced an out-of-box candidate %r" % (x,))
        self.calls += 1
        return float(self.f(x))

    def batch(self, xs, pool=None):
        xs = [np.asarray(x, dtype=float) for x in xs]
        for x in xs:
            if np.any(x < self.lower - 1e-12) or np.any(x > self.upper + 1e-12):
                raise RuntimeError("optimizer produced an out-of-box candidate %r" % (x,))
        self.calls += len(xs)
        if pool is None:
            return np.array([float(self.f(x)) for x in xs])
        return np.array([float(v) for v in pool.map(self.f, xs)])


def differential_evolution(problem: OptProblem, pop_size=120, f_weight=0.8,
                           cr=0.7, max_gen=60, threads=1):
    """DE/rand/1/bin with clamp-to-bounds, geared for rough backflow landscapes.

    Seeded through numpy SeedSequence; each generation's randomness is drawn
    up front, so thread count cannot change the search path.  History records
    the best value after every generation (monotone non-increasing), and the
    returned best is re-evaluated once at emission so the reported value is
    trustworthy even for a noisy objective.
    """
    if pop_size < 8:
        raise ValueError("population of %d is too small, need >= 8" % pop_size)
    if not 0.0 < cr <= 1.0:
        raise ValueError("crossover rate must be in (0, 1]")
    if not 0.0 < f_weight <= 2.0:
        raise ValueError("differential weight must be in (0, 2]")
    counted = _CountedObjective(problem)
    root = np.random.SeedSequence(problem.seed)
    dim = problem.dim
    span = problem.upper - problem.lower

    init_rng = np.random.default_rng(root.spawn(1)[0])
    pop = problem.lower + init_rng.random((pop_size, dim)) * span
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        values = counted.batch(pop, pool)
        history = [(0, float(values.min()))]
        converged = True
        gen = 0
        for gen in range(1, max_gen + 1):
            if counted.calls + pop_size > problem.budget:
                converged = False
                break
            rng = np.random.default_rng(root.spawn(1)[0])
            # draw all of this generation's randomness before evaluating
            abc = np.empty((pop_size, 3), dtype=int)
            for i in range(pop_size):
                choices = rng.permutation(pop_size - 1)[:3]
                abc[i] = np.where(choices >= i, choices + 1, choices)
            cross = rng.random((pop_size, dim)) < cr
            forced = rng.integers(0, dim, size=pop_size)
            cross[np.arange(pop_size), forced] = True
            mutant = pop[abc[:, 0]] + f_weight * (pop[abc[:, 1]] - pop[abc[:, 2]])
            mutant = np.clip(mutant, problem.lower, problem.upper)
            trial = np.where(cross, mutant, pop)
            trial_values = counted.batch(trial, pool)
            better = trial_values < values
            pop[better] = trial[better]
            values[better] = trial_values[better]
            history.append((gen, float(values.min())))
    finally:
        if pool is not None:
            pool.shutdown()
    best_idx = int(np.argmin(values))
    best_x = pop[best_idx].copy()
    best_value = counted(best_x)
    return OptResult(best_x, best_value, counted.calls, history, problem.seed,
                     converged, {"generations": gen, "method": "de/rand/1/bin",
                                 "population": pop.copy(),
                                 "values": values.copy()})


@dataclass
class AnnealSchedule:
    """Geometric cooling: T_k = t_start * ratio^k, n_steps moves per temperature.

    The proposal width shrinks by step_ratio each stage; without that, a
    fixed-width walker cannot refine past its own step size once cold.
    """

    t_start: float = 1.0
    ratio: float = 0.95
    n_temps: int = 60
    n_steps: int = 30
    step_scale: float = 0.1
    step_ratio: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("cooling ratio must sit in (0, 1)")
        if not 0.0 < self.step_ratio <= 1.0:
            raise ValueError("step ratio must sit in (0, 1]")
        if self.t_start < 0:
            raise ValueError("start temperature must be >= 0")


def _reflect_into_box(x, lower, upper):
    """Fold a point back into the box by reflecting at the walls."""
    span = upper - lower
    y = np.mod(x - lower, 2.0 * span)
    y = np.where(y > span, 2.0 * span - y, y)
    return lower + y


def simulated_annealing(problem: OptProblem, schedule: AnnealSchedule = None):
    """Metropolis annealing with box-reflected Gaussian moves.

    At zero temperature it degenerates to pure descent (only improvements
    accepted).  Same determinism guarantee as the DE driver.
    """
    if schedule is None:
        schedule = AnnealSchedule()
    counted = _CountedObjective(problem)
    rng = np.random.default_rng(np.random.SeedSequence(problem.seed))
    span = problem.upper - problem.lower

    x = problem.lower + rng.random(problem.dim) * span
    fx = counted(x)
    best_x, best_value = x.copy(), fx
    history = [(0, fx)]
    converged = True
    temp = schedule.t_start
    sigma = schedule.step_scale
    for stage in range(schedule.n_temps):
        for _ in range(schedule.n_steps):
            if counted.exhausted:
                converged = False
                break
            prop = x + rng.normal(0.0, sigma, problem.dim) * span
            prop = _reflect_into_box(prop, problem.lower, problem.upper)
            fp = counted(prop)
            delta = fp - fx
            accept = delta <= 0
            if not accept and temp > 0:
                accept = rng.random() < np.exp(-delta / temp)
            elif not accept:
                rng.random()   # keep the draw count fixed for determinism
            if accept:
                x, fx = prop, fp
                if fx < best_value:
                    best_x, best_value = x.copy(), fx
        history.append((stage + 1, best_value))
        if not converged:
            break
        temp *= schedule.ratio
        sigma *= schedule.step_ratio
    best_value = counted(best_x)
    return OptResult(best_x, best_value, counted.calls, history, problem.seed,
                     converged, {"method": "annealing", "final_temp": temp})


def mixed_resolution_maximize(setup_factory, low, high, opt_kwargs=None,
                              top_k=3, seed=0, budget=None, threads=1):
    """Two-stage maximization: search cheap, re-score the leaders carefully.

    setup_factory(resolution) builds an evaluator with a .loss(x) method (loss
    = minus the quantity being maximized) and bounds attributes lower/upper,
    for the given (window, samples) resolution.  Stage one runs DE at `low`;
    stage two re-evaluates the top_k members of the final population at `high`
    and returns the winner with both scores recorded.  A single-sample low
    resolution cannot rank candidates and triggers a warning.
    """
    if low[1] < 16:
        warnings.warn("low-resolution stage has too few samples to rank "
                      "candidates reliably", stacklevel=2)
    cheap = setup_factory(low)
    lower = np.asarray(getattr(cheap, "lower"), dtype=float)
    upper = np.asarray(getattr(cheap, "upper"), dtype=float)
    kwargs = dict(pop_size=120, f_weight=0.8, cr=0.7, max_gen=60)
    if opt_kwargs:
        kwargs.update(opt_kwargs)
    if budget is None:
        budget = kwargs["pop_size"] * (kwargs["max_gen"] + 2)
    problem = OptProblem(cheap.loss, lower, upper, budget=budget, seed=seed)
    stage1 = differential_evolution(problem, threads=threads, **kwargs)

    fine = setup_factory(high)
    pop = stage1.meta["population"]
    pop_values = stage1.meta["values"]
    order1 = np.argsort(pop_values)[:max(1, top_k)]
    candidates = [pop[i].copy() for i in order1]
    fine_values = [-float(fine.loss(x)) for x in candidates]
    order = int(np.argmax(fine_values))
    best = candidates[order]
    return {
        "best_x": best,
        "value_high": fine_values[order],
        "value_low": -stage1.best_value,
        "stage1": stage1,
        "candidates": [(c, v) for c, v in zip(candidates, fine_values)],
    }
