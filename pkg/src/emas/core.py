"""Domain model: agents, energy accounting, action contracts.

Agents are records owned by exactly one engine at a time.  Life energy is an
integer unit count so conservation checks are exact; no operation may drive
it negative.  Actions are described by runtime-checkable contracts (a type
gate, a precondition over the state before, and a postcondition relating the
states before and after), and the engines can run with checking enabled to
validate every transition they produce.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np


class EmasError(Exception):
    """Base class for engine errors."""


class StructuralError(EmasError):
    """Malformed input distinct from a contract violation (bad dimension,
    empty meeting, mismatched snapshots)."""


class NoNeighborError(EmasError):
    """A neighbor query ran against a population or topology with no
    eligible partner."""


class ContractViolationError(EmasError):
    """An executed action failed its contract in checked mode."""

    def __init__(self, report: "ViolationReport"):
        super().__init__(str(report))
        self.report = report


class TypeTag(enum.Enum):
    """Agent type tags. The two types are incomparable; only reflexive
    subsumption holds."""

    IND = "ind"
    ISL = "isl"


def subsumes(a: TypeTag, b: TypeTag) -> bool:
    """Partial order on agent types: is ``a`` a subtype of ``b``?

    With exactly two unrelated tags this reduces to equality, but the
    relation is the extension point for richer hierarchies (reflexive,
    antisymmetric, transitive).
    """
    return a is b


class Solution:
    """A candidate solution: a real vector plus an optional cached fitness.

    The fitness cache is the initialization indicator: a solution is
    initialized if and only if a fitness value has been computed for it.
    Vectors are never mutated in place once attached to a solution, so
    solutions may be shared freely across engines and transports.
    """

    __slots__ = ("values", "cached_fitness")

    def __init__(self, values: np.ndarray, cached_fitness: float | None = None):
        self.values = values
        self.cached_fitness = cached_fitness

    @property
    def initialized(self) -> bool:
        return self.cached_fitness is not None

    @property
    def objective(self) -> float:
        """Raw (minimization) objective value of an initialized solution."""
        if self.cached_fitness is None:
            raise StructuralError("solution is not initialized")
        return -self.cached_fitness

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        fit = f"{self.cached_fitness:.6g}" if self.initialized else "uninit"
        return f"Solution(dim={len(self.values)}, fitness={fit})"


class Agent:
    """An evolving individual: identity, type tag, solution, energy units."""

    __slots__ = ("id", "tp", "sol", "en")

    def __init__(self, id: int, sol: Solution, en: int, tp: TypeTag = TypeTag.IND):
        if en < 0:
            raise StructuralError(f"agent energy must be non-negative, got {en}")
        self.id = id
        self.tp = tp
        self.sol = sol
        self.en = en

    @property
    def fitness(self) -> float:
        fit = self.sol.cached_fitness
        if fit is None:
            raise StructuralError(f"agent {self.id} carries an unevaluated solution")
        return fit

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Agent(id={self.id}, en={self.en}, tp={self.tp.value})"


class IdSource:
    """Allocator of run-unique agent identifiers.

    Identifiers are never reused.  Each island gets its own namespace (the
    high bits) so that concurrently breeding islands cannot collide.
    """

    NAMESPACE_SHIFT = 44

    def __init__(self, namespace: int = 0):
        if namespace < 0 or namespace >= (1 << 20):
            raise StructuralError(f"id namespace out of range: {namespace}")
        self._base = namespace << self.NAMESPACE_SHIFT
        self._counter = itertools.count(1)

    def next_id(self) -> int:
        return self._base | next(self._counter)


@dataclass(frozen=True)
class EmasParams:
    """Run parameters for the evolutionary engine.

    Defaults reproduce the benchmark configuration used throughout the test
    suite.  ``mutation_range`` is the Gaussian mutation standard deviation
    expressed as a fraction of the objective's per-coordinate domain width
    (see ``operators.make_child``).
    """

    initial_size: int = 50
    initial_energy: int = 10
    reproduction_threshold: int = 10
    reproduction_transfer: int = 5
    fight_transfer: int = 10
    fight_arena_size: int = 2
    migration_probability: float = 0.001
    migration_energy_min: int = 0
    problem_size: int = 100
    mutation_rate: float = 0.1
    mutation_range: float = 0.05
    mutation_probability: float = 0.75
    recombination_probability: float = 0.3

    def __post_init__(self):
        for name in ("migration_probability", "mutation_rate",
                     "mutation_probability", "recombination_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise StructuralError(f"{name} must lie in [0, 1], got {v}")
        for name in ("initial_energy", "reproduction_threshold",
                     "reproduction_transfer", "fight_transfer",
                     "migration_energy_min"):
            v = getattr(self, name)
            if v < 0 or v != int(v):
                raise StructuralError(f"{name} must be a non-negative integer, got {v}")
        if self.initial_size < 1:
            raise StructuralError("initial_size must be at least 1")
        if self.problem_size < 1:
            raise StructuralError("problem_size must be at least 1")
        if self.fight_arena_size < 2:
            raise StructuralError("fight_arena_size must be at least 2")
        if self.mutation_range <= 0:
            raise StructuralError("mutation_range must be positive")
        if self.reproduction_transfer > self.reproduction_threshold:
            raise StructuralError(
                "reproduction_transfer exceeds reproduction_threshold: a parent"
                " clearing the threshold could not afford the transfer")


def total_energy(population: Iterable[Agent]) -> int:
    """Sum of energy units across a population; 0 for the empty one."""
    return sum(ag.en for ag in population)


def find_ag(population: list[Agent], self_agent: Agent,
            rng: np.random.Generator) -> Agent:
    """Pick a meeting partner: uniform over the population minus self.

    Raises NoNeighborError when no other agent exists; callers must treat
    the meeting as degenerate in that case.
    """
    others = [ag for ag in population if ag.id != self_agent.id]
    if not others:
        raise NoNeighborError(f"agent {self_agent.id} has no neighbour")
    return others[int(rng.integers(len(others)))]


# --- contracts -----------------------------------------------------------

@dataclass(frozen=True)
class AgentState:
    """Immutable view of one agent at snapshot time."""

    id: int
    tp: TypeTag
    en: int
    fitness: float | None


@dataclass(frozen=True)
class Snapshot:
    """State of a meeting's participants plus ambient environment context.

    ``population_size`` is the size of the whole population the participants
    were drawn from, which preconditions such as "more than one agent
    present" range over.
    """

    env_id: int
    agents: tuple[AgentState, ...]
    population_size: int

    def by_id(self) -> dict[int, AgentState]:
        return {a.id: a for a in self.agents}


def snapshot_of(agents: Iterable[Agent], env_id: int,
                population_size: int) -> Snapshot:
    return Snapshot(
        env_id=env_id,
        agents=tuple(
            AgentState(a.id, a.tp, a.en, a.sol.cached_fitness) for a in agents),
        population_size=population_size,
    )


@dataclass(frozen=True)
class ActionContract:
    """A named action: type gate, precondition, postcondition.

    Only agents whose type is subsumed by ``tp`` may execute the action.
    ``pre`` judges the acting agent against the before-state; ``post``
    relates the before- and after-states.
    """

    name: str
    tp: TypeTag
    pre: Callable[[AgentState, Snapshot], bool]
    post: Callable[[Snapshot, Snapshot], bool]


@dataclass(frozen=True)
class ViolationReport:
    """Names the contract clause an executed action failed."""

    action: str
    clause: str  # "type-gate" | "pre" | "post"
    actor_id: int
    detail: str = ""

    def __str__(self) -> str:
        msg = f"action '{self.action}' violated its {self.clause} clause (actor {self.actor_id})"
        return f"{msg}: {self.detail}" if self.detail else msg


def check_action(contract: ActionContract, actor: AgentState,
                 before: Snapshot, after: Snapshot) -> Optional[ViolationReport]:
    """Validate one executed action; None means the contract holds.

    Raises StructuralError when the snapshots do not describe the same
    environment (that is malformed input, not a contract violation).
    """
    if before.env_id != after.env_id:
        raise StructuralError(
            f"snapshot environment mismatch: {before.env_id} vs {after.env_id}")
    if not subsumes(actor.tp, contract.tp):
        return ViolationReport(contract.name, "type-gate", actor.id,
                               f"{actor.tp.value} is not subsumed by {contract.tp.value}")
    if not contract.pre(actor, before):
        return ViolationReport(contract.name, "pre", actor.id)
    if not contract.post(before, after):
        return ViolationReport(contract.name, "post", actor.id)
    return None


def ensure_action(contract: ActionContract, actor: AgentState,
                  before: Snapshot, after: Snapshot) -> None:
    """check_action, raising ContractViolationError on failure."""
    report = check_action(contract, actor, before, after)
    if report is not None:
        raise ContractViolationError(report)


# Standard contracts for the three meeting actions.  The post clauses verify
# exact integer energy accounting from the before/after pairing by id.

def die_contract() -> ActionContract:
    def pre(actor: AgentState, before: Snapshot) -> bool:
        return actor.en == 0

    def post(before: Snapshot, after: Snapshot) -> bool:
        before_ids = {a.id for a in before.agents}
        after_ids = {a.id for a in after.agents}
        # every removed member had zero energy; survivors unchanged
        removed = before_ids - after_ids
        if after_ids - before_ids:
            return False
        by_id = before.by_id()
        if any(by_id[i].en != 0 for i in removed):
            return False
        after_by_id = after.by_id()
        return all(after_by_id[i].en == by_id[i].en for i in after_ids)

    return ActionContract("die", TypeTag.IND, pre, post)


def fight_contract(params: EmasParams) -> ActionContract:
    def pre(actor: AgentState, before: Snapshot) -> bool:
        if before.population_size <= 1:
            return False
        return all(a.en > 0 for a in before.agents)

    def post(before: Snapshot, after: Snapshot) -> bool:
        if {a.id for a in before.agents} != {a.id for a in after.agents}:
            return False
        before_by = before.by_id()
        gains = 0
        losses = 0
        for a in after.agents:
            delta = a.en - before_by[a.id].en
            if a.en < 0:
                return False
            if delta > 0:
                gains += delta
            elif delta < 0:
                # no loser may pay more than the clamped transfer
                if -delta > min(params.fight_transfer, before_by[a.id].en):
                    return False
                losses += -delta
        return gains == losses

    return ActionContract("fight", TypeTag.IND, pre, post)


def reproduction_contract(params: EmasParams) -> ActionContract:
    def pre(actor: AgentState, before: Snapshot) -> bool:
        if not 1 <= len(before.agents) <= 2:
            return False
        return all(a.en > params.reproduction_threshold for a in before.agents)

    def post(before: Snapshot, after: Snapshot) -> bool:
        before_by = before.by_id()
        newborns = [a for a in after.agents if a.id not in before_by]
        parents = [a for a in after.agents if a.id in before_by]
        if len(parents) != len(before.agents):
            return False
        if not 1 <= len(newborns) <= len(before.agents):
            return False
        if any(a.en != params.reproduction_transfer for a in newborns):
            return False
        paid = sum(before_by[a.id].en - a.en for a in parents)
        if any(a.en < 0 for a in after.agents):
            return False
        return paid == len(newborns) * params.reproduction_transfer

    return ActionContract("reproduction", TypeTag.IND, pre, post)
