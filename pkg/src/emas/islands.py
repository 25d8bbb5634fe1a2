"""Two-level island system: topologies, migration, and cluster runs.

Islands own independent engines and communicate only by shipping agents
through a transport.  In-process clusters interleave the islands' steps in
a deterministic round-robin and apply deliveries in sorted order at step
boundaries, so multi-island runs reproduce bit-for-bit from a seed.  The
TCP transport trades that determinism for real distribution.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .core import Agent, EmasParams, NoNeighborError, Solution, StructuralError
from .metrics import TimelineRecorder, SampleBuffer, StepClock, WallClock
from .operators import Objective
from .rng import seed_rng

logger = logging.getLogger(__name__)

# Migration target modes. "experiment" draws the destination uniformly from
# all islands including the origin (a self-target is a no-op); "topology"
# draws uniformly from the island's neighbour set.
EXPERIMENT_MODE = "experiment"


@dataclass(frozen=True)
class MigrationEnvelope:
    """One agent in flight between islands.

    The envelope carries the full energy deducted from the source at send
    time and the cached fitness, so the destination never re-evaluates.
    """

    agent_id: int
    energy: int
    values: np.ndarray
    cached_fitness: float
    source: int
    destination: int

    def to_agent(self) -> Agent:
        return Agent(self.agent_id, Solution(self.values, self.cached_fitness),
                     self.energy)


def envelope_for(agent: Agent, source: int, destination: int) -> MigrationEnvelope:
    return MigrationEnvelope(agent.id, agent.en, agent.sol.values,
                             agent.fitness, source, destination)


def neighbors_for(island_id: int, all_islands: list[int],
                  topology: str) -> tuple[int, ...]:
    """Neighbour sets for the supported topologies (excluding self)."""
    others = [i for i in all_islands if i != island_id]
    if topology == "complete" or topology == EXPERIMENT_MODE:
        return tuple(others)
    if topology == "ring":
        if not others:
            return ()
        ordered = sorted(all_islands)
        k = ordered.index(island_id)
        prev_i = ordered[(k - 1) % len(ordered)]
        next_i = ordered[(k + 1) % len(ordered)]
        return tuple({prev_i, next_i} - {island_id})
    raise StructuralError(f"unknown topology '{topology}'")


@dataclass
class Island:
    """An aggregate agent: identity, neighbour set, and the engine that
    provides the environment for its subpopulation (object-based or
    array-based)."""

    island_id: int
    neighbors: tuple[int, ...]
    engine: object

    def __post_init__(self):
        if self.island_id in self.neighbors:
            raise StructuralError("an island cannot neighbour itself")


def find_loc(island: Island, rng: np.random.Generator) -> int:
    """Uniform choice among the island's neighbours."""
    if not island.neighbors:
        raise NoNeighborError(f"island {island.island_id} has no neighbours")
    return island.neighbors[int(rng.integers(len(island.neighbors)))]


def _pick_target(island: Island, all_islands: list[int], mode: str,
                 rng: np.random.Generator) -> int | None:
    """Destination island for one emigrant, or None to stay."""
    if mode == EXPERIMENT_MODE:
        target = all_islands[int(rng.integers(len(all_islands)))]
        return None if target == island.island_id else target
    try:
        return find_loc(island, rng)
    except NoNeighborError:
        return None


def migration_phase(island: Island, params: EmasParams,
                    all_islands: list[int], mode: str,
                    rng: np.random.Generator) -> list[MigrationEnvelope]:
    """Select emigrants after a step and wrap them in envelopes.

    Each agent is independently selected with ``migration_probability``.
    In experiment mode the target is uniform over all islands including the
    origin, and a self-target keeps the agent in place.  In topology mode
    the target comes from the neighbour set; with no neighbours migration
    is skipped.  Selected agents must exceed ``migration_energy_min``.
    """
    engine = island.engine
    size = engine.population_size
    if size == 0 or params.migration_probability == 0.0:
        return []
    draws = rng.random(size)
    p = params.migration_probability
    e_min = params.migration_energy_min
    envelopes: list[MigrationEnvelope] = []

    if hasattr(engine, "remove_rows"):  # array-based engine
        selected = np.nonzero(draws < p)[0]
        if selected.size == 0:
            return []
        leaving_rows = []
        targets = []
        for row in selected:
            if engine.ens[row] <= e_min:
                continue
            target = _pick_target(island, all_islands, mode, rng)
            if target is None:
                continue
            leaving_rows.append(int(row))
            targets.append(target)
        if not leaving_rows:
            return []
        extracted = engine.remove_rows(np.array(leaving_rows))
        for (agent_id, energy, values, fitness), target in zip(extracted, targets):
            envelopes.append(MigrationEnvelope(agent_id, energy, values,
                                               fitness, island.island_id,
                                               target))
        return envelopes

    stay: list[Agent] = []
    for agent, draw in zip(engine.population, draws):
        if draw >= p or agent.en <= e_min:
            stay.append(agent)
            continue
        target = _pick_target(island, all_islands, mode, rng)
        if target is None:
            stay.append(agent)
            continue
        envelopes.append(envelope_for(agent, island.island_id, target))
    if envelopes:
        engine.population = stay
    return envelopes


class DeliveryFailure(StructuralError):
    """Raised by transports when an envelope cannot reach its destination;
    the caller must return the agent to the source population."""


class InProcessTransport:
    """Channel transport for islands sharing one process.

    Deliveries are buffered and applied at step boundaries in deterministic
    (source, agent id) order.
    """

    def __init__(self):
        self._inboxes: dict[int, list[MigrationEnvelope]] = {}

    def register(self, island_id: int) -> None:
        self._inboxes[island_id] = []

    def send(self, envelope: MigrationEnvelope) -> None:
        inbox = self._inboxes.get(envelope.destination)
        if inbox is None:
            raise DeliveryFailure(
                f"unknown destination island {envelope.destination}")
        inbox.append(envelope)

    def deliver_pending(self, islands: dict[int, Island]) -> None:
        for island_id, inbox in sorted(self._inboxes.items()):
            if not inbox:
                continue
            inbox.sort(key=lambda e: (e.source, e.agent_id))
            engine = islands[island_id].engine
            for env in inbox:
                engine.add_agent(env.agent_id, env.energy, env.values,
                                 env.cached_fitness)
            inbox.clear()

    def in_flight_energy(self) -> int:
        return sum(e.energy for inbox in self._inboxes.values() for e in inbox)


def deliver(envelope: MigrationEnvelope, transport,
            source_island: Island | None = None) -> bool:
    """Hand an envelope to a transport; on failure return the agent to the
    source population so no energy is lost.  Returns True when sent."""
    try:
        transport.send(envelope)
        return True
    except DeliveryFailure as exc:
        logger.warning("migration %d -> %d failed (%s); agent returned",
                       envelope.source, envelope.destination, exc)
        if source_island is not None:
            source_island.engine.add_agent(envelope.agent_id, envelope.energy,
                                           envelope.values,
                                           envelope.cached_fitness)
        return False


def run_tcp_node(params: EmasParams, objective: Objective, listen: str,
                 peers: list[str], topology: str, stop, seed: int,
                 snapshot_interval_s: float = 1.0, checked: bool = False,
                 transport_factory=None):
    """Run one island of a distributed cluster over the TCP transport.

    Every node of the cluster must be started with the same address set
    (its own ``listen`` plus the ``peers``); island identities are the
    indices of the sorted address list, so all nodes agree on them without
    any discovery protocol.  Failed deliveries return the agent to this
    node's population; nothing is lost.  TCP runs are explicitly
    non-deterministic.
    """
    from .wire import TcpTransport

    all_addrs = sorted([listen] + list(peers))
    my_id = all_addrs.index(listen)
    all_ids = list(range(len(all_addrs)))
    peer_map = {}
    for i, addr in enumerate(all_addrs):
        if i != my_id:
            host, port = addr.rsplit(":", 1)
            peer_map[i] = (host, int(port))
    host, port = listen.rsplit(":", 1)
    if transport_factory is None:
        transport = TcpTransport(my_id, (host, int(port)), peer_map)
    else:
        transport = transport_factory(my_id, (host, int(port)), peer_map)

    from .sync_engine import make_engine
    engine = make_engine(params, objective, seed, island=my_id, checked=checked)
    island = Island(my_id, neighbors_for(my_id, all_ids, topology), engine)
    migration_rng = seed_rng(seed, f"island{my_id}/migration")
    mode = EXPERIMENT_MODE if topology == EXPERIMENT_MODE else "topology"
    clock = WallClock()
    recorder = TimelineRecorder(my_id, max(1, int(snapshot_interval_s * 1000)))

    try:
        engine.init_population()
        recorder.record(clock.now_ms(), engine.best_objective,
                        engine.counter.count, engine.population_size,
                        engine.total_energy, force=True)
        while True:
            if stop.should_stop(clock.elapsed_s(), engine.counter.count,
                                engine.best_objective, engine.steps_done):
                break
            arrivals = transport.drain_inbox()
            for env in arrivals:
                engine.add_agent(env.agent_id, env.energy, env.values,
                                 env.cached_fitness)
            if engine.population_size:
                engine.step_once()
            else:
                time.sleep(0.005)
            envelopes = migration_phase(island, params, all_ids, mode,
                                        migration_rng)
            for env in envelopes:
                deliver(env, transport, island)
            recorder.record(clock.now_ms(), engine.best_objective,
                            engine.counter.count, engine.population_size,
                            engine.total_energy)
    finally:
        recorder.flush(clock.now_ms(), engine.best_objective,
                       engine.counter.count, engine.population_size,
                       engine.total_energy)
        transport.close()
    return recorder, island, transport


def run_cluster(params: EmasParams, objective: Objective, n_islands: int,
                topology: str, stop, seed: int,
                snapshot_interval_s: float = 1.0, time_source: str = "wall",
                checked: bool = False, buffer: SampleBuffer | None = None):
    """Run an in-process cluster of synchronous islands to the stop bound.

    Returns (recorders, islands, transport).  Islands advance in lock-step
    rotation; migration runs as a distinct phase after each island's step,
    and deliveries land before the next rotation.  Global energy over
    populations plus in-flight envelopes is conserved exactly.
    """
    if n_islands < 1:
        raise StructuralError("cluster needs at least one island")
    all_ids = list(range(n_islands))
    transport = InProcessTransport()
    islands: dict[int, Island] = {}
    recorders: dict[int, TimelineRecorder] = {}
    migration_rngs: dict[int, np.random.Generator] = {}
    clock = StepClock() if time_source == "steps" else WallClock()
    interval_ms = max(1, int(snapshot_interval_s * 1000))
    from .sync_engine import make_engine
    for i in all_ids:
        engine = make_engine(params, objective, seed, island=i, checked=checked)
        islands[i] = Island(i, neighbors_for(i, all_ids, topology), engine)
        recorders[i] = TimelineRecorder(i, interval_ms, buffer)
        migration_rngs[i] = seed_rng(seed, f"island{i}/migration")
        transport.register(i)

    mode = EXPERIMENT_MODE if topology == EXPERIMENT_MODE else "topology"

    for i in all_ids:
        eng = islands[i].engine
        eng.init_population()
        recorders[i].record(clock.now_ms(), eng.best_objective,
                            eng.counter.count, eng.population_size,
                            eng.total_energy, force=True)

    def global_evals() -> int:
        return sum(islands[i].engine.counter.count for i in all_ids)

    def global_best() -> float:
        return min(islands[i].engine.best_objective for i in all_ids)

    steps = 0
    try:
        while True:
            if stop.should_stop(clock.elapsed_s(), global_evals(),
                                global_best(), steps):
                break
            live = [i for i in all_ids if islands[i].engine.population_size]
            if not live and transport.in_flight_energy() == 0:
                logger.warning("cluster extinct after %d rotations", steps)
                for rec in recorders.values():
                    rec.timeline.extinct = True
                break
            for i in all_ids:
                island = islands[i]
                eng = island.engine
                if eng.population_size:
                    eng.step_once()
                envelopes = migration_phase(island, params, all_ids, mode,
                                            migration_rngs[i])
                for env in envelopes:
                    deliver(env, transport, island)
                recorders[i].record(clock.now_ms(), eng.best_objective,
                                    eng.counter.count, eng.population_size,
                                    eng.total_energy)
            transport.deliver_pending(islands)
            clock.on_step()
            steps += 1
    finally:
        for i in all_ids:
            eng = islands[i].engine
            recorders[i].flush(clock.now_ms(), eng.best_objective,
                               eng.counter.count, eng.population_size,
                               eng.total_energy)
    return recorders, islands, transport
