"""Array-based synchronous engine: the lightweight-agent fast path.

Agents here are rows of parallel arrays (id, energy, objective, solution
vector), the purest form of agents-as-data.  Each step performs the same
partition / fight / breed / shuffle cycle as the object engine, but every
phase is vectorized, which roughly doubles throughput on benchmark-sized
populations.  Checked runs use the object engine instead: contracts need
per-meeting snapshots, and the two paths draw their randomness in different
orders (each is deterministic within itself).

Energy lives in an int64 array and the accounting stays exact; identifiers
are int64 and never reused.
"""

from __future__ import annotations

import logging

import numpy as np

from .core import Agent, EmasParams, IdSource, Solution
from .operators import EvaluationCounter, Objective, mutation_sigma
from .rng import seed_rng

logger = logging.getLogger(__name__)


class VectorEngine:
    """One island's population as parallel arrays."""

    def __init__(self, params: EmasParams, objective: Objective, seed: int,
                 island: int = 0, counter: EvaluationCounter | None = None):
        self.params = params
        self.objective = objective
        self.island = island
        self.counter = counter if counter is not None else EvaluationCounter()
        self.rng = seed_rng(seed, f"island{island}/engine")
        self.init_rng = seed_rng(seed, f"island{island}/init")
        self._id_base = island << IdSource.NAMESPACE_SHIFT
        self._next_id = 1
        n = objective.dimension
        self.vecs = np.empty((0, n))
        self.objs = np.empty(0)
        self.ens = np.empty(0, dtype=np.int64)
        self.ids = np.empty(0, dtype=np.int64)
        self.best_fitness = -np.inf
        self.steps_done = 0
        self._sigma = mutation_sigma(params, objective)

    # --- identity ------------------------------------------------------

    def _take_ids(self, k: int) -> np.ndarray:
        start = self._next_id
        self._next_id += k
        return self._id_base | np.arange(start, start + k, dtype=np.int64)

    # --- observation ---------------------------------------------------

    @property
    def population_size(self) -> int:
        return self.ens.size

    @property
    def total_energy(self) -> int:
        return int(self.ens.sum())

    @property
    def best_objective(self) -> float:
        return -self.best_fitness

    @property
    def extinct(self) -> bool:
        return self.ens.size == 0

    @property
    def population(self) -> list[Agent]:
        """Materialize the rows as agent objects (tests, debugging)."""
        return [Agent(int(i), Solution(v, -float(o)), int(e))
                for i, v, o, e in zip(self.ids, self.vecs, self.objs, self.ens)]

    # --- lifecycle -----------------------------------------------------

    def init_population(self) -> None:
        p = self.params
        n = self.objective.dimension
        self.vecs = self.init_rng.uniform(self.objective.lower_bound,
                                          self.objective.upper_bound,
                                          (p.initial_size, n))
        self.objs = self.objective.rows(self.vecs)
        self.counter.increment_by(p.initial_size)
        self.ens = np.full(p.initial_size, p.initial_energy, dtype=np.int64)
        self.ids = self._take_ids(p.initial_size)
        self.best_fitness = -float(self.objs.min())

    def step_once(self) -> None:
        p = self.params
        rng = self.rng
        ens = self.ens
        objs = self.objs
        vecs = self.vecs

        dead = ens == 0
        repro = ens > p.reproduction_threshold
        fight_idx = np.nonzero(~(dead | repro))[0]

        # fights: consecutive pairs of the shuffled order; the stable
        # first-maximum (here: first of the pair on ties) collects
        # min(fight_transfer, energy) from the other
        nf = fight_idx.size & ~1
        if nf:
            first = fight_idx[0:nf:2]
            second = fight_idx[1:nf:2]
            first_wins = objs[first] <= objs[second]
            win = np.where(first_wins, first, second)
            lose = np.where(first_wins, second, first)
            paid = np.minimum(p.fight_transfer, ens[lose])
            ens[lose] -= paid
            ens[win] += paid

        repro_idx = np.nonzero(repro)[0]
        k = repro_idx.size
        if k:
            nr = k & ~1
            # pairs breed two children (each parent funds its own, the
            # partner supplies the other genome); a trailing lone parent
            # breeds one mutation-only child with itself
            parent = np.empty(k, dtype=np.int64)
            partner = np.empty(k, dtype=np.int64)
            parent[0:nr:2] = repro_idx[0:nr:2]
            parent[1:nr:2] = repro_idx[1:nr:2]
            partner[0:nr:2] = repro_idx[1:nr:2]
            partner[1:nr:2] = repro_idx[0:nr:2]
            if k > nr:
                parent[nr:] = repro_idx[nr:]
                partner[nr:] = repro_idx[nr:]

            children = vecs[parent]
            gates = rng.random(2 * k)
            cross = np.nonzero(gates[:k] < p.recombination_probability)[0]
            if cross.size:
                u = rng.random((cross.size, children.shape[1]))
                base = children[cross]
                children[cross] = base + u * (vecs[partner[cross]] - base)
            mutated = np.nonzero(gates[k:] < p.mutation_probability)[0]
            if mutated.size:
                shape = (mutated.size, children.shape[1])
                mask = rng.random(shape) < p.mutation_rate
                noise = rng.standard_normal(shape)
                children[mutated] += mask * (noise * self._sigma)
            child_objs = self.objective.rows(children)
            self.counter.increment_by(k)
            best_child = -float(child_objs.min())
            if best_child > self.best_fitness:
                self.best_fitness = best_child
            ens[parent] -= p.reproduction_transfer

        keep = np.nonzero(~dead)[0]
        if k:
            vecs = np.concatenate([vecs[keep], children])
            objs = np.concatenate([objs[keep], child_objs])
            ens = np.concatenate(
                [ens[keep], np.full(k, p.reproduction_transfer, dtype=np.int64)])
            ids = np.concatenate([self.ids[keep], self._take_ids(k)])
        else:
            vecs = vecs[keep]
            objs = objs[keep]
            ens = ens[keep]
            ids = self.ids[keep]

        perm = rng.permutation(ens.size)
        self.vecs = vecs[perm]
        self.objs = objs[perm]
        self.ens = ens[perm]
        self.ids = ids[perm]
        self.steps_done += 1

    # --- migration support ----------------------------------------------

    def observe_fitness(self, fitness: float) -> None:
        if fitness > self.best_fitness:
            self.best_fitness = fitness

    def remove_rows(self, rows: np.ndarray) -> list[tuple[int, int, np.ndarray, float]]:
        """Extract agents (id, energy, vector, fitness) and drop the rows."""
        out = [(int(self.ids[r]), int(self.ens[r]), self.vecs[r].copy(),
                -float(self.objs[r])) for r in rows]
        keep = np.ones(self.ens.size, dtype=bool)
        keep[rows] = False
        self.vecs = self.vecs[keep]
        self.objs = self.objs[keep]
        self.ens = self.ens[keep]
        self.ids = self.ids[keep]
        return out

    def add_agent(self, agent_id: int, energy: int, values: np.ndarray,
                  fitness: float) -> None:
        self.vecs = np.concatenate([self.vecs, values[None, :]])
        self.objs = np.concatenate([self.objs, [-fitness]])
        self.ens = np.concatenate([self.ens, np.array([energy], dtype=np.int64)])
        self.ids = np.concatenate([self.ids, np.array([agent_id], dtype=np.int64)])
        self.observe_fitness(fitness)
