"""Synchronous engine: populations as data, meetings as batch transforms.

Each step partitions the population into arenas by agent energy, groups
agents into fixed-arity meetings, applies every meeting, and shuffles the
concatenated outcomes into the successor population.  The engine is
single-threaded and owns its population exclusively; with a fixed seed the
whole trajectory is reproducible.
"""

from __future__ import annotations

import enum
import logging

import numpy as np

from .core import (Agent, EmasParams, IdSource, Solution,
                   StructuralError, die_contract, ensure_action,
                   fight_contract, reproduction_contract, snapshot_of,
                   total_energy)
from .operators import (EvaluationCounter, Objective, make_child,
                        random_solution)

logger = logging.getLogger(__name__)

# A meeting outcome is the sequence of agents surviving the meeting plus any
# newborns; total energy across members is always preserved exactly.
MeetingOutcome = list


class ArenaKind(enum.Enum):
    DEATH = "death"
    FIGHT = "fight"
    REPRODUCTION = "reproduction"


def choose_arena(agent: Agent, params: EmasParams) -> ArenaKind:
    """Arena-choice policy: zero energy dies, energy strictly above the
    reproduction threshold breeds, everything else fights."""
    en = agent.en
    if en == 0:
        return ArenaKind.DEATH
    if en > params.reproduction_threshold:
        return ArenaKind.REPRODUCTION
    return ArenaKind.FIGHT


def fight_meeting(members: list[Agent], params: EmasParams) -> MeetingOutcome:
    """Fight: the best-fitness member collects energy from every other.

    The winner is the first member attaining the maximum fitness (stable
    maxBy), and each other member surrenders min(fight_transfer, its
    energy).  A single-member group idles.  Exact ties still transfer to
    the designated winner: leaving ties unresolved freezes a converged
    population, because clones can no longer accumulate the energy needed
    to reproduce.
    """
    if not members:
        raise StructuralError("fight meeting requires at least one member")
    if len(members) > params.fight_arena_size:
        raise StructuralError(
            f"fight meeting of {len(members)} exceeds arena size {params.fight_arena_size}")
    if len(members) == 1:
        return members
    winner = members[0]
    best = winner.fitness
    for m in members[1:]:
        f = m.fitness
        if f > best:
            winner, best = m, f
    gained = 0
    transfer = params.fight_transfer
    for m in members:
        if m is winner:
            continue
        paid = transfer if m.en >= transfer else m.en
        m.en -= paid
        gained += paid
    winner.en += gained
    return members


def reproduction_meeting(members: list[Agent], params: EmasParams,
                         objective: Objective, counter: EvaluationCounter,
                         id_source: IdSource,
                         rng: np.random.Generator) -> MeetingOutcome:
    """Reproduction: each parent funds one child with the transfer quantum.

    With two members, child k derives from parent k (first parent of the
    variation pipeline) and the other member; a lone member breeds a
    mutation-only child from itself.  Parents precede children in the
    outcome.  Energy is conserved exactly.
    """
    if not members:
        raise StructuralError("reproduction meeting requires at least one member")
    if len(members) > 2:
        raise StructuralError("reproduction arena arity is 2")
    transfer = params.reproduction_transfer
    if len(members) == 2:
        a, b = members
        pairings = ((a, b), (b, a))
    else:
        a = members[0]
        pairings = ((a, a),)
    outcome: MeetingOutcome = list(members)
    for parent, partner in pairings:
        child_sol = make_child(parent.sol, partner.sol, params, objective,
                               counter, rng)
        parent.en -= transfer
        outcome.append(Agent(id_source.next_id(), child_sol, transfer))
    return outcome


def death_meeting(members: list[Agent]) -> MeetingOutcome:
    """Death: members are dropped from the system."""
    return []


def _breed_batch(groups: list[list[Agent]], params: EmasParams,
                 objective: Objective, counter: EvaluationCounter,
                 id_source: IdSource, rng: np.random.Generator,
                 out: list[Agent]) -> float:
    """Vectorized reproduction across all of a step's meetings.

    Distributionally identical to calling reproduction_meeting per group
    (same Bernoulli gates, the same in-hypercube crossover and Gaussian
    mutation per child) but draws its randomness in row batches, which cuts
    the per-child overhead severalfold.  Draw order differs from the
    per-meeting path, so checked runs use the literal path instead.
    Returns the best fitness among the newborn children.
    """
    from .operators import mutation_sigma

    pairings: list[tuple[Agent, Agent]] = []
    for group in groups:
        if len(group) == 2:
            a, b = group
            pairings.append((a, b))
            pairings.append((b, a))
        else:
            a = group[0]
            pairings.append((a, a))
    k = len(pairings)
    n = objective.dimension
    # np.stack copies, so in-place edits below never touch parent vectors
    children = np.stack([parent.sol.values for parent, _ in pairings])
    recomb_rows = np.nonzero(rng.random(k) < params.recombination_probability)[0]
    if recomb_rows.size:
        partners = np.stack([pairings[j][1].sol.values for j in recomb_rows])
        u = rng.random((recomb_rows.size, n))
        children[recomb_rows] += u * (partners - children[recomb_rows])
    mutated_rows = np.nonzero(rng.random(k) < params.mutation_probability)[0]
    if mutated_rows.size:
        sigma = mutation_sigma(params, objective)
        mask = rng.random((mutated_rows.size, n)) < params.mutation_rate
        noise = rng.standard_normal((mutated_rows.size, n))
        children[mutated_rows] += mask * (noise * sigma)
    objs = objective.rows(children)
    counter.increment_by(k)
    transfer = params.reproduction_transfer
    i = 0
    for group in groups:
        out.extend(group)
        for parent in group if len(group) == 2 else group[:1]:
            parent.en -= transfer
            sol = Solution(children[i], -float(objs[i]))
            out.append(Agent(id_source.next_id(), sol, transfer))
            i += 1
    return -float(objs.min())


def step(population: list[Agent], params: EmasParams, objective: Objective,
         counter: EvaluationCounter, id_source: IdSource,
         rng: np.random.Generator, checked: bool = False,
         env_id: int = 0) -> tuple[list[Agent], float]:
    """One synchronous step: partition, group, meet, shuffle.

    Partitioning preserves the (already shuffled) population order, so
    consecutive grouping yields random pairings without extra draws.  The
    returned population is uniformly shuffled.  Total energy is preserved
    exactly; the evaluation counter grows by exactly the number of children.
    Returns (successor population, best fitness among this step's children;
    -inf when no child was born).
    """
    if not population:
        return [], -np.inf
    deaths: list[Agent] = []
    fights: list[Agent] = []
    repros: list[Agent] = []
    threshold = params.reproduction_threshold
    for ag in population:
        en = ag.en
        if en == 0:
            deaths.append(ag)
        elif en > threshold:
            repros.append(ag)
        else:
            fights.append(ag)

    pop_size = len(population)
    out: list[Agent] = []
    child_best = -np.inf

    if deaths:
        if checked:
            before = snapshot_of(deaths, env_id, pop_size)
            after = snapshot_of([], env_id, pop_size)
            contract = die_contract()
            for actor in before.agents:
                ensure_action(contract, actor, before, after)
        out.extend(death_meeting(deaths))

    arity = params.fight_arena_size
    if fights:
        if not checked and arity == 2:
            # dominant configuration, inlined
            transfer = params.fight_transfer
            for i in range(0, len(fights) - 1, 2):
                a = fights[i]
                b = fights[i + 1]
                if b.sol.cached_fitness > a.sol.cached_fitness:
                    winner, loser = b, a
                else:
                    winner, loser = a, b
                paid = transfer if loser.en >= transfer else loser.en
                loser.en -= paid
                winner.en += paid
            out.extend(fights)
        else:
            fight_c = fight_contract(params) if checked else None
            for i in range(0, len(fights), arity):
                group = fights[i:i + arity]
                if checked and len(group) > 1:
                    before = snapshot_of(group, env_id, pop_size)
                    result = fight_meeting(group, params)
                    after = snapshot_of(result, env_id, pop_size)
                    ensure_action(fight_c, before.agents[0], before, after)
                    out.extend(result)
                else:
                    out.extend(fight_meeting(group, params))

    if repros:
        if checked:
            repro_c = reproduction_contract(params)
            for i in range(0, len(repros), 2):
                group = repros[i:i + 2]
                before = snapshot_of(group, env_id, pop_size)
                result = reproduction_meeting(group, params, objective,
                                              counter, id_source, rng)
                after = snapshot_of(result, env_id, pop_size)
                ensure_action(repro_c, before.agents[0], before, after)
                for child in result[len(group):]:
                    if child.sol.cached_fitness > child_best:
                        child_best = child.sol.cached_fitness
                out.extend(result)
        else:
            groups = [repros[i:i + 2] for i in range(0, len(repros), 2)]
            child_best = _breed_batch(groups, params, objective, counter,
                                      id_source, rng, out)

    perm = rng.permutation(len(out))
    return [out[j] for j in perm], child_best


class SyncEngine:
    """Stateful wrapper owning one island's population and streams."""

    def __init__(self, params: EmasParams, objective: Objective, seed: int,
                 island: int = 0, checked: bool = False,
                 counter: EvaluationCounter | None = None):
        from .rng import seed_rng
        self.params = params
        self.objective = objective
        self.island = island
        self.checked = checked
        self.counter = counter if counter is not None else EvaluationCounter()
        self.id_source = IdSource(namespace=island)
        self.rng = seed_rng(seed, f"island{island}/engine")
        self.init_rng = seed_rng(seed, f"island{island}/init")
        self.population: list[Agent] = []
        self.best_fitness = -np.inf
        self.steps_done = 0

    def init_population(self) -> None:
        pop = []
        for _ in range(self.params.initial_size):
            sol = random_solution(self.objective, self.counter, self.init_rng)
            pop.append(Agent(self.id_source.next_id(), sol,
                             self.params.initial_energy))
        self.population = pop
        self.observe_population()

    def observe_population(self) -> None:
        best = self.best_fitness
        for ag in self.population:
            f = ag.sol.cached_fitness
            if f > best:
                best = f
        self.best_fitness = best

    def observe_fitness(self, fitness: float) -> None:
        if fitness > self.best_fitness:
            self.best_fitness = fitness

    def add_agent(self, agent_id: int, energy: int, values, fitness: float) -> None:
        self.population.append(Agent(agent_id, Solution(values, fitness), energy))
        self.observe_fitness(fitness)

    @property
    def population_size(self) -> int:
        return len(self.population)

    @property
    def total_energy(self) -> int:
        return total_energy(self.population)

    @property
    def best_objective(self) -> float:
        return -self.best_fitness

    def step_once(self) -> None:
        self.population, child_best = step(
            self.population, self.params, self.objective, self.counter,
            self.id_source, self.rng, checked=self.checked, env_id=self.island)
        self.steps_done += 1
        if child_best > self.best_fitness:
            self.best_fitness = child_best

    @property
    def extinct(self) -> bool:
        return not self.population


def make_engine(params: EmasParams, objective: Objective, seed: int,
                island: int = 0, checked: bool = False):
    """Engine for a synchronous island: the array-based fast engine, or the
    object engine when contract checking is requested."""
    if checked:
        return SyncEngine(params, objective, seed, island=island, checked=True)
    from .vector_engine import VectorEngine
    return VectorEngine(params, objective, seed, island=island)


def run_sync(params: EmasParams, objective: Objective, stop, recorder,
             seed: int, island: int = 0, checked: bool = False,
             clock=None):
    """Run a single synchronous island to the stop condition.

    ``stop`` is a StopCondition; ``recorder`` a metrics TimelineRecorder.
    Returns the engine so callers can inspect final state; the timeline
    lives in the recorder.
    """
    from .metrics import WallClock
    clock = clock if clock is not None else WallClock()
    engine = make_engine(params, objective, seed, island=island, checked=checked)
    engine.init_population()
    recorder.record(clock.now_ms(), engine.best_objective, engine.counter.count,
                    engine.population_size, engine.total_energy, force=True)
    while True:
        if stop.should_stop(clock.elapsed_s(), engine.counter.count,
                            engine.best_objective, engine.steps_done):
            break
        if engine.extinct:
            logger.warning("island %d extinct after %d steps", island,
                           engine.steps_done)
            recorder.timeline.extinct = True
            break
        engine.step_once()
        clock.on_step()
        recorder.record(clock.now_ms(), engine.best_objective,
                        engine.counter.count, engine.population_size,
                        engine.total_energy)
    recorder.flush(clock.now_ms(), engine.best_objective, engine.counter.count,
                   engine.population_size, engine.total_energy)
    return engine
