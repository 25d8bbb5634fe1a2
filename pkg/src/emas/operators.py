"""Objective functions, fitness orientation, and variation operators.

Fitness is the negated objective value: engines maximize fitness, which
minimizes the objective.  Reporting surfaces always convert back to raw
objective values.  Every objective evaluation passes through an
EvaluationCounter, giving the run an exact evaluation tally.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EmasParams, Solution, StructuralError

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Objective:
    """A minimization problem over a real box.

    The bounds delimit initialization only; evaluation is total on R^n and
    mutated solutions are never clamped back into the box.  A batch
    evaluator over row-stacked vectors is optional; it must agree with the
    scalar evaluator exactly.
    """

    name: str
    dimension: int
    lower_bound: float
    upper_bound: float
    evaluate: Callable[[np.ndarray], float]
    evaluate_batch: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def domain_width(self) -> float:
        return self.upper_bound - self.lower_bound

    def __call__(self, x: np.ndarray) -> float:
        if x.shape != (self.dimension,):
            raise StructuralError(
                f"{self.name} expects dimension {self.dimension}, got shape {x.shape}")
        return self.evaluate(x)

    def rows(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate a (k, dimension) matrix row-wise."""
        if xs.ndim != 2 or xs.shape[1] != self.dimension:
            raise StructuralError(
                f"{self.name} batch expects (k, {self.dimension}), got {xs.shape}")
        if self.evaluate_batch is not None:
            return self.evaluate_batch(xs)
        return np.array([self.evaluate(row) for row in xs])


class EvaluationCounter:
    """Monotone tally of objective evaluations, safe for concurrent use."""

    __slots__ = ("_count", "_lock")

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    def increment(self) -> None:
        with self._lock:
            self._count += 1

    def increment_by(self, k: int) -> None:
        if k < 0:
            raise StructuralError("counter increments are non-negative")
        with self._lock:
            self._count += k

    @property
    def count(self) -> int:
        return self._count


def rastrigin(x: np.ndarray) -> float:
    """Rastrigin benchmark: 10n + sum(x_i^2 - 10 cos(2 pi x_i)).

    Highly multimodal with one global minimum of 0 at the origin.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise StructuralError(f"rastrigin expects a non-empty vector, got shape {x.shape}")
    # (x*x).sum() rather than x @ x so the row-batched variant agrees bitwise
    return 10.0 * x.size + float((x * x).sum() - 10.0 * np.cos(_TWO_PI * x).sum())


def rastrigin_rows(xs: np.ndarray) -> np.ndarray:
    """Row-wise Rastrigin over a (k, n) matrix; agrees bitwise with the
    scalar form (same operation association)."""
    return 10.0 * xs.shape[1] + (
        (xs * xs).sum(axis=1) - 10.0 * np.cos(_TWO_PI * xs).sum(axis=1))


# Conventional initialization box for the Rastrigin benchmark.
RASTRIGIN_LOWER = -5.12
RASTRIGIN_UPPER = 5.12

_OBJECTIVES: dict[str, Callable[[int], Objective]] = {
    "rastrigin": lambda n: Objective("rastrigin", n, RASTRIGIN_LOWER,
                                     RASTRIGIN_UPPER, rastrigin, rastrigin_rows),
}


def make_objective(name: str, dimension: int) -> Objective:
    """Look up an objective by CLI name."""
    try:
        factory = _OBJECTIVES[name]
    except KeyError:
        raise StructuralError(
            f"unknown objective '{name}' (available: {sorted(_OBJECTIVES)})") from None
    if dimension < 1:
        raise StructuralError("objective dimension must be at least 1")
    return factory(dimension)


def fitness(objective: Objective, sol: Solution,
            counter: EvaluationCounter) -> float:
    """Fitness of a solution: the negated objective value, cached.

    The first call evaluates the objective and increments the counter by
    exactly one; later calls return the cache and leave the counter alone.
    """
    cached = sol.cached_fitness
    if cached is not None:
        return cached
    value = -objective(sol.values)
    sol.cached_fitness = value
    counter.increment()
    return value


def crossover(p1: np.ndarray, p2: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
    """Random average crossover: a uniform point of the parents' hypercube.

    Per coordinate, child_i = p1_i + u_i (p2_i - p1_i) with independent
    u_i ~ U[0, 1], so every child coordinate lies between its parents'.
    """
    if p1.shape != p2.shape:
        raise StructuralError(
            f"crossover parents disagree on dimension: {p1.shape} vs {p2.shape}")
    u = rng.random(p1.size)
    return p1 + u * (p2 - p1)


def mutate(values: np.ndarray, rate: float, sigma: float,
           rng: np.random.Generator) -> np.ndarray:
    """Per-feature Gaussian mutation.

    Each coordinate is independently perturbed with probability ``rate`` by
    a N(0, sigma^2) sample.  The result is never clamped to any box.
    """
    if not 0.0 <= rate <= 1.0:
        raise StructuralError(f"mutation rate must lie in [0, 1], got {rate}")
    if sigma <= 0:
        raise StructuralError(f"mutation sigma must be positive, got {sigma}")
    mask = rng.random(values.size) < rate
    k = int(mask.sum())
    if k == 0:
        return values.copy()
    out = values.copy()
    out[mask] += rng.normal(0.0, sigma, k)
    return out


def mutation_sigma(params: EmasParams, objective: Objective) -> float:
    """Effective Gaussian std dev for child mutation.

    ``mutation_range`` is relative to the objective's per-coordinate domain
    width: on a width-10.24 box the benchmark default of 0.05 yields a
    sigma of 0.512.  An absolute sigma would leave the search unable to
    cross the barriers between basins once the population contracts.
    """
    return params.mutation_range * objective.domain_width


def make_child(p1: Solution, p2: Solution, params: EmasParams,
               objective: Objective, counter: EvaluationCounter,
               rng: np.random.Generator) -> Solution:
    """Variation pipeline producing one evaluated child solution.

    The child starts from the first parent's vector; with probability
    ``recombination_probability`` it is replaced by a crossover of both
    parents, then with probability ``mutation_probability`` the mutation
    operator runs over it.  The child is evaluated immediately.
    """
    if not (p1.initialized and p2.initialized):
        raise StructuralError("make_child requires initialized parents")
    vec = p1.values
    if rng.random() < params.recombination_probability:
        vec = crossover(p1.values, p2.values, rng)
    if rng.random() < params.mutation_probability:
        vec = mutate(vec, params.mutation_rate, mutation_sigma(params, objective), rng)
    child = Solution(vec)
    fitness(objective, child, counter)
    return child


def random_solution(objective: Objective, counter: EvaluationCounter,
                    rng: np.random.Generator) -> Solution:
    """Fresh uniform sample from the initialization box, evaluated."""
    vec = rng.uniform(objective.lower_bound, objective.upper_bound,
                      objective.dimension)
    sol = Solution(vec)
    fitness(objective, sol, counter)
    return sol
