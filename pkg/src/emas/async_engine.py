"""Asynchronous engine: agents and arenas as message-passing entities.

Every agent is an independent entity with a mailbox; arenas act as cyclic
barriers that flush a meeting when full, or after an inactivity timeout so
under-filled arenas cannot deadlock the system.  A pluggable dispatcher maps
entities onto execution resources: one dedicated thread per entity, a fixed
worker pool, or a single thread interleaving everyone.  Under every policy
an entity processes its messages sequentially and messages between a fixed
sender/receiver pair arrive in send order.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Agent, EmasParams, IdSource, Solution, StructuralError
from .metrics import TimelineRecorder, WallClock
from .operators import EvaluationCounter, Objective, make_child, random_solution
from .rng import seed_rng

logger = logging.getLogger(__name__)

# Arena inactivity timeout. The value is far below the metrics cadence yet
# long enough that full arenas almost never wait for it under load.
DEFAULT_ARENA_TIMEOUT_S = 0.1

# Messages processed per scheduling slot under pooled dispatch.
_DISPATCH_BATCH = 10


class ProtocolViolation(StructuralError):
    """An entity broke the meeting protocol (e.g. joined twice)."""


@dataclass(frozen=True)
class DispatchPolicy:
    """Execution policy for entities: own | pool:N | single."""

    kind: str
    workers: int = 0

    @classmethod
    def parse(cls, text: str) -> "DispatchPolicy":
        if text == "own":
            return cls("own")
        if text == "single":
            return cls("pool", 1)
        if text == "pool":
            return cls("pool", 4)
        if text.startswith("pool:"):
            n = int(text.split(":", 1)[1])
            if n < 1:
                raise StructuralError("pool size must be at least 1")
            return cls("pool", n)
        raise StructuralError(f"unknown dispatch policy '{text}'")

    def __str__(self) -> str:
        return "own" if self.kind == "own" else (
            "single" if self.workers == 1 else f"pool:{self.workers}")


# --- messages ------------------------------------------------------------

@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class JoinMeeting:
    entity: "AgentEntity"


@dataclass(frozen=True)
class MeetingEnded:
    pass


@dataclass(frozen=True)
class Tick:
    pass


@dataclass(frozen=True)
class GetFitness:
    meeting_id: int


@dataclass(frozen=True)
class FitnessReply:
    meeting_id: int
    entity: "AgentEntity"
    fitness: Optional[float]  # None refuses the meeting (entity died)


@dataclass(frozen=True)
class TakeEnergy:
    meeting_id: int
    amount: int


@dataclass(frozen=True)
class EnergySurrendered:
    meeting_id: int
    entity: "AgentEntity"
    amount: int


@dataclass(frozen=True)
class ReceiveEnergy:
    amount: int


@dataclass(frozen=True)
class GetState:
    meeting_id: int


@dataclass(frozen=True)
class StateReply:
    meeting_id: int
    entity: "AgentEntity"
    solution: Optional[Solution]
    energy: int


@dataclass(frozen=True)
class TakeEnergyForChild:
    amount: int


_STOP = object()


# --- actor infrastructure -------------------------------------------------

class _Actor:
    """Sequential message processor; subclasses implement handle()."""

    def __init__(self, engine: "AsyncEngine", name: str):
        self.engine = engine
        self.name = name
        self._mailbox: queue.SimpleQueue = queue.SimpleQueue()
        self._pending = 0
        self._scheduled = False
        self._slot_lock = threading.Lock()
        self._dispatcher: "_Dispatcher | None" = None

    def handle(self, msg) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"<{type(self).__name__} {self.name}>"


class _Dispatcher:
    def register(self, actor: _Actor) -> None:
        raise NotImplementedError

    def notify(self, actor: _Actor) -> None:
        """Called after a message lands in the actor's mailbox."""
        raise NotImplementedError

    def retire(self, actor: _Actor) -> None:
        """Release per-actor resources once the entity left the system."""

    def shutdown(self) -> None:
        raise NotImplementedError


_RELEASE = object()


class OwnThreadDispatcher(_Dispatcher):
    """A dedicated thread per live entity, blocking on its mailbox.

    Threads are recycled: when an entity dies its worker parks on a free
    list and serves the next newborn, so steady-state populations pay no
    thread create/destroy churn (entity turnover equals the death rate,
    hundreds per second under benchmark parameters).  Fresh workers are
    created by a spawner thread so arenas never pay spawn latency inside a
    meeting; messages to a just-registered entity wait in its mailbox.
    """

    def __init__(self):
        self._free: queue.SimpleQueue = queue.SimpleQueue()
        self._workers: list[threading.Thread] = []
        self._serving: set[_Actor] = set()
        self._lock = threading.Lock()
        self._stopping = False
        self._spawnq: queue.SimpleQueue = queue.SimpleQueue()
        self._spawner = threading.Thread(target=self._spawn_loop,
                                         name="actor-spawner", daemon=True)
        self._spawner.start()

    def register(self, actor: _Actor) -> None:
        actor._dispatcher = self
        try:
            handoff = self._free.get_nowait()
            handoff.put(actor)
        except queue.Empty:
            self._spawnq.put(actor)

    def _spawn_loop(self) -> None:
        while True:
            actor = self._spawnq.get()
            if actor is _STOP:
                return
            handoff: queue.SimpleQueue = queue.SimpleQueue()
            worker = threading.Thread(target=self._worker_loop,
                                      args=(handoff,), name="agent-worker",
                                      daemon=True)
            with self._lock:
                self._workers.append(worker)
            worker.start()
            handoff.put(actor)

    def _worker_loop(self, handoff: queue.SimpleQueue) -> None:
        while True:
            actor = handoff.get()
            if actor is _STOP:
                return
            with self._lock:
                self._serving.add(actor)
            mailbox = actor._mailbox
            released = False
            while True:
                msg = mailbox.get()
                if msg is _STOP:
                    return
                if msg is _RELEASE:
                    released = True
                    break
                try:
                    actor.handle(msg)
                except Exception as exc:
                    actor.engine._note_actor_error(actor, msg, exc)
                finally:
                    actor.engine._message_done()
            with self._lock:
                self._serving.discard(actor)
                if self._stopping:
                    return
            if released:
                self._free.put(handoff)

    def notify(self, actor: _Actor) -> None:
        pass  # the serving thread is already blocked on the mailbox

    def retire(self, actor: _Actor) -> None:
        # queued behind any still-pending messages, preserving order
        actor._mailbox.put(_RELEASE)

    def shutdown(self) -> None:
        with self._lock:
            self._stopping = True
            serving = list(self._serving)
            workers = list(self._workers)
        self._spawnq.put(_STOP)
        for actor in serving:
            actor._mailbox.put(_STOP)
        while True:
            try:
                handoff = self._free.get_nowait()
            except queue.Empty:
                break
            handoff.put(_STOP)
        self._spawner.join(timeout=5.0)
        for worker in workers:
            worker.join(timeout=5.0)


class PoolDispatcher(_Dispatcher):
    """N workers multiplex all entities; single-thread is the N=1 case.

    An actor is on the run queue at most once; a worker drains a bounded
    batch of its messages per slot, preserving per-actor ordering.
    """

    def __init__(self, workers: int):
        self._runq: queue.SimpleQueue = queue.SimpleQueue()
        self._workers = [threading.Thread(target=self._work,
                                          name=f"dispatch-{i}", daemon=True)
                         for i in range(workers)]
        for w in self._workers:
            w.start()

    def register(self, actor: _Actor) -> None:
        actor._dispatcher = self

    def notify(self, actor: _Actor) -> None:
        with actor._slot_lock:
            actor._pending += 1
            if actor._scheduled:
                return
            actor._scheduled = True
        self._runq.put(actor)

    def _work(self) -> None:
        while True:
            actor = self._runq.get()
            if actor is _STOP:
                return
            done = 0
            while done < _DISPATCH_BATCH:
                with actor._slot_lock:
                    if actor._pending == 0:
                        actor._scheduled = False
                        break
                    actor._pending -= 1
                msg = actor._mailbox.get()
                done += 1
                if msg is _STOP:
                    continue
                try:
                    actor.handle(msg)
                except Exception as exc:
                    actor.engine._note_actor_error(actor, msg, exc)
                finally:
                    actor.engine._message_done()
            else:
                # batch exhausted with work left: go to the back of the queue
                self._runq.put(actor)

    def shutdown(self) -> None:
        for _ in self._workers:
            self._runq.put(_STOP)
        for w in self._workers:
            w.join(timeout=5.0)


# --- entities -------------------------------------------------------------

class AgentEntity(_Actor):
    """A heavyweight agent: exclusively owned state, message interface.

    State machine: Idle -> WaitingInArena -> InMeeting -> Idle.  The entity
    joins a new arena only after MeetingEnded, so it takes part in at most
    one meeting at a time.
    """

    IDLE = "idle"
    WAITING = "waiting"
    IN_MEETING = "in-meeting"

    def __init__(self, engine: "AsyncEngine", agent: Agent):
        super().__init__(engine, f"agent-{agent.id}")
        self.agent = agent
        self.state = self.IDLE
        self.alive = True

    def handle(self, msg) -> None:
        if isinstance(msg, (Start, MeetingEnded)):
            self.state = self.IDLE
            self._choose_and_join()
        elif isinstance(msg, GetFitness):
            self.state = self.IN_MEETING
            fit = self.agent.fitness if self.alive else None
            self.engine.send(self.engine.fight_arena,
                             FitnessReply(msg.meeting_id, self, fit))
        elif isinstance(msg, TakeEnergy):
            paid = min(msg.amount, self.agent.en)
            self.agent.en -= paid
            self.engine.send(self.engine.fight_arena,
                             EnergySurrendered(msg.meeting_id, self, paid))
        elif isinstance(msg, ReceiveEnergy):
            self.agent.en += msg.amount
        elif isinstance(msg, TakeEnergyForChild):
            # affordable by construction: energy cannot change between the
            # reproduction join and the meeting, and join required
            # en > threshold >= transfer
            self.agent.en -= msg.amount
        elif isinstance(msg, GetState):
            self.state = self.IN_MEETING
            sol = self.agent.sol if self.alive else None
            self.engine.send(self.engine.reproduction_arena,
                             StateReply(msg.meeting_id, self, sol, self.agent.en))
        else:
            raise ProtocolViolation(f"{self.name}: unexpected {msg!r}")

    def _choose_and_join(self) -> None:
        if self.engine.stopping or not self.alive:
            return
        en = self.agent.en
        if en == 0:
            arena = self.engine.death_arena
        elif en > self.engine.params.reproduction_threshold:
            arena = self.engine.reproduction_arena
        else:
            arena = self.engine.fight_arena
        self.state = self.WAITING
        self.engine.send(arena, JoinMeeting(self))


@dataclass
class _Meeting:
    members: list[AgentEntity]
    replies: dict = field(default_factory=dict)
    winner: AgentEntity | None = None
    collected: int = 0
    expected: int = 0


class ArenaActor(_Actor):
    """Cyclic-barrier arena: collects joiners, runs meetings by messages.

    A meeting fires when the waiting room reaches capacity, or on a Tick
    after the inactivity timeout with at least one waiter.  Because the
    meeting body advances through reply messages, the arena can keep
    collecting the next meeting while earlier ones are still in flight.
    """

    def __init__(self, engine: "AsyncEngine", name: str, capacity: int,
                 timeout_s: float):
        super().__init__(engine, name)
        self.capacity = capacity
        self.timeout_s = timeout_s
        self.waiting_room: list[AgentEntity] = []
        self._waiting_ids: set[int] = set()
        self._first_join: float | None = None
        self._meetings: dict[int, _Meeting] = {}
        self._next_meeting = 0

    def handle(self, msg) -> None:
        if isinstance(msg, JoinMeeting):
            entity = msg.entity
            if entity.agent.id in self._waiting_ids:
                raise ProtocolViolation(
                    f"{entity.name} joined {self.name} twice without MeetingEnded")
            self.waiting_room.append(entity)
            self._waiting_ids.add(entity.agent.id)
            if self._first_join is None:
                self._first_join = time.monotonic()
            if len(self.waiting_room) >= self.capacity:
                self._flush()
        elif isinstance(msg, Tick):
            if (self.waiting_room and self._first_join is not None
                    and time.monotonic() - self._first_join >= self.timeout_s):
                self._flush()
        else:
            self.on_reply(msg)

    def _flush(self) -> None:
        members = self.waiting_room[:self.capacity]
        self.waiting_room = self.waiting_room[self.capacity:]
        for m in members:
            self._waiting_ids.discard(m.agent.id)
        self._first_join = time.monotonic() if self.waiting_room else None
        meeting_id = self._next_meeting
        self._next_meeting += 1
        meeting = _Meeting(members=members)
        self._meetings[meeting_id] = meeting
        self.begin_meeting(meeting_id, meeting)

    def _end(self, meeting_id: int, meeting: _Meeting) -> None:
        del self._meetings[meeting_id]
        self.engine.meetings_done.increment()
        for m in meeting.members:
            self.engine.send(m, MeetingEnded())

    def begin_meeting(self, meeting_id: int, meeting: _Meeting) -> None:
        raise NotImplementedError

    def on_reply(self, msg) -> None:
        raise NotImplementedError


class FightArena(ArenaActor):
    """Non-blocking fight: query fitness, collect from losers, pay winner."""

    def begin_meeting(self, meeting_id: int, meeting: _Meeting) -> None:
        if len(meeting.members) == 1:
            # partial meeting from a timeout: idle semantics
            self._end(meeting_id, meeting)
            return
        meeting.expected = len(meeting.members)
        for m in meeting.members:
            self.engine.send(m, GetFitness(meeting_id))

    def on_reply(self, msg) -> None:
        if isinstance(msg, FitnessReply):
            meeting = self._meetings.get(msg.meeting_id)
            if meeting is None:
                return
            meeting.replies[msg.entity.agent.id] = msg.fitness
            if len(meeting.replies) < meeting.expected:
                return
            live = [m for m in meeting.members
                    if meeting.replies[m.agent.id] is not None]
            if len(live) < 2:
                self._end(msg.meeting_id, meeting)
                return
            winner = live[0]
            best = meeting.replies[winner.agent.id]
            for m in live[1:]:
                f = meeting.replies[m.agent.id]
                if f > best:
                    winner, best = m, f
            meeting.winner = winner
            losers = [m for m in live if m is not winner]
            meeting.expected = len(losers)
            meeting.collected = 0
            meeting.replies = {}
            transfer = self.engine.params.fight_transfer
            for loser in losers:
                self.engine.send(loser, TakeEnergy(msg.meeting_id, transfer))
        elif isinstance(msg, EnergySurrendered):
            meeting = self._meetings.get(msg.meeting_id)
            if meeting is None:
                return
            meeting.collected += msg.amount
            meeting.replies[msg.entity.agent.id] = msg.amount
            if len(meeting.replies) < meeting.expected:
                return
            self.engine.send(meeting.winner, ReceiveEnergy(meeting.collected))
            self._end(msg.meeting_id, meeting)
        else:
            raise ProtocolViolation(f"{self.name}: unexpected {msg!r}")


class ReproductionArena(ArenaActor):
    """Breeding meeting: parents fund one child each; a lone parent (after
    a timeout) breeds a mutation-only child."""

    def __init__(self, engine: "AsyncEngine", name: str, capacity: int,
                 timeout_s: float, rng: np.random.Generator):
        super().__init__(engine, name, capacity, timeout_s)
        self.rng = rng

    def begin_meeting(self, meeting_id: int, meeting: _Meeting) -> None:
        meeting.expected = len(meeting.members)
        for m in meeting.members:
            self.engine.send(m, GetState(meeting_id))

    def on_reply(self, msg) -> None:
        if not isinstance(msg, StateReply):
            raise ProtocolViolation(f"{self.name}: unexpected {msg!r}")
        meeting = self._meetings.get(msg.meeting_id)
        if meeting is None:
            return
        meeting.replies[msg.entity.agent.id] = msg
        if len(meeting.replies) < meeting.expected:
            return
        live = [m for m in meeting.members
                if meeting.replies[m.agent.id].solution is not None]
        engine = self.engine
        transfer = engine.params.reproduction_transfer
        if len(live) == 2:
            a, b = live
            pairings = ((a, b), (b, a))
        elif len(live) == 1:
            a = live[0]
            pairings = ((a, a),)
        else:
            pairings = ()
        for parent, partner in pairings:
            child_sol = make_child(meeting.replies[parent.agent.id].solution,
                                   meeting.replies[partner.agent.id].solution,
                                   engine.params, engine.objective,
                                   engine.counter, self.rng)
            engine.send(parent, TakeEnergyForChild(transfer))
            engine.spawn_child(child_sol, transfer)
        self._end(msg.meeting_id, meeting)


class DeathArena(ArenaActor):
    """Capacity-one arena: joiners are removed from the system at once."""

    def __init__(self, engine: "AsyncEngine"):
        super().__init__(engine, "death-arena", capacity=1, timeout_s=1e9)

    def handle(self, msg) -> None:
        if isinstance(msg, JoinMeeting):
            entity = msg.entity
            if entity.agent.en != 0:
                raise ProtocolViolation(
                    f"{entity.name} joined the death arena with energy {entity.agent.en}")
            entity.alive = False
            self.engine.remove_entity(entity)
        elif isinstance(msg, Tick):
            pass
        else:
            raise ProtocolViolation(f"{self.name}: unexpected {msg!r}")


# --- engine ---------------------------------------------------------------

class AsyncEngine:
    """Spawns the entities, wires arenas and dispatch, tracks liveness."""

    def __init__(self, params: EmasParams, objective: Objective, seed: int,
                 policy: DispatchPolicy,
                 arena_timeout_s: float = DEFAULT_ARENA_TIMEOUT_S):
        self.params = params
        self.objective = objective
        self.policy = policy
        self.counter = EvaluationCounter()
        self.meetings_done = EvaluationCounter()
        self.id_source = IdSource(namespace=0)
        self.stopping = False
        self._registry: dict[int, AgentEntity] = {}
        self._registry_lock = threading.Lock()
        self._inflight = 0
        self._inflight_lock = threading.Lock()
        self._quiescent = threading.Condition(self._inflight_lock)
        self.best_fitness = -np.inf
        self._best_lock = threading.Lock()
        self.actor_errors: list[Exception] = []
        self._errors_lock = threading.Lock()

        if policy.kind == "own":
            # agents get dedicated threads; the mediating arenas run on a
            # cooperative worker so a meeting does not pay a thread wake-up
            # for every message passing through the mediator
            self.dispatcher: _Dispatcher = OwnThreadDispatcher()
            self._arena_dispatcher: _Dispatcher = PoolDispatcher(1)
        else:
            self.dispatcher = PoolDispatcher(policy.workers)
            self._arena_dispatcher = self.dispatcher

        self.fight_arena = FightArena(self, "fight-arena",
                                      params.fight_arena_size, arena_timeout_s)
        self.reproduction_arena = ReproductionArena(
            self, "reproduction-arena", 2, arena_timeout_s,
            seed_rng(seed, "async/reproduction"))
        self.death_arena = DeathArena(self)
        self._init_rng = seed_rng(seed, "async/init")
        for arena in (self.fight_arena, self.reproduction_arena, self.death_arena):
            self._arena_dispatcher.register(arena)

        self._timer = threading.Thread(target=self._tick_loop, daemon=True,
                                       name="arena-timer")
        self._tick_interval = min(0.02, arena_timeout_s / 4 or 0.02)

    # --- messaging core ---

    def send(self, actor: _Actor, msg) -> None:
        with self._inflight_lock:
            self._inflight += 1
        actor._mailbox.put(msg)
        actor._dispatcher.notify(actor)

    def _message_done(self) -> None:
        with self._inflight_lock:
            self._inflight -= 1
            if self._inflight == 0:
                self._quiescent.notify_all()

    def _note_actor_error(self, actor: _Actor, msg, exc: Exception) -> None:
        logger.exception("actor %s failed handling %r", actor.name, msg,
                         exc_info=exc)
        with self._errors_lock:
            self.actor_errors.append(exc)

    def await_quiescence(self, timeout_s: float = 30.0) -> bool:
        deadline = time.monotonic() + timeout_s
        with self._inflight_lock:
            while self._inflight > 0:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._quiescent.wait(remaining)
        return True

    # --- population management ---

    def bootstrap(self) -> list[AgentEntity]:
        entities = []
        for _ in range(self.params.initial_size):
            sol = random_solution(self.objective, self.counter, self._init_rng)
            agent = Agent(self.id_source.next_id(), sol,
                          self.params.initial_energy)
            entity = AgentEntity(self, agent)
            self._note_fitness(agent.fitness)
            with self._registry_lock:
                self._registry[agent.id] = entity
            self.dispatcher.register(entity)
            entities.append(entity)
        return entities

    def start(self, entities: list[AgentEntity]) -> None:
        self._timer.start()
        for e in entities:
            self.send(e, Start())

    def spawn_child(self, sol: Solution, energy: int) -> None:
        agent = Agent(self.id_source.next_id(), sol, energy)
        entity = AgentEntity(self, agent)
        self._note_fitness(agent.fitness)
        with self._registry_lock:
            self._registry[agent.id] = entity
        self.dispatcher.register(entity)
        self.send(entity, Start())

    def remove_entity(self, entity: AgentEntity) -> None:
        with self._registry_lock:
            self._registry.pop(entity.agent.id, None)
        self.dispatcher.retire(entity)

    def _note_fitness(self, fit: float) -> None:
        with self._best_lock:
            if fit > self.best_fitness:
                self.best_fitness = fit

    @property
    def best_objective(self) -> float:
        return -self.best_fitness

    def live_stats(self) -> tuple[int, int]:
        """(population size, total energy) over live entities.

        Energy is exact at quiescence; mid-meeting it may momentarily
        exclude units travelling inside transfer messages.
        """
        with self._registry_lock:
            entities = list(self._registry.values())
        return len(entities), sum(e.agent.en for e in entities)

    def _tick_loop(self) -> None:
        while not self.stopping:
            time.sleep(self._tick_interval)
            for arena in (self.fight_arena, self.reproduction_arena):
                self.send(arena, Tick())

    def shutdown(self) -> None:
        self.stopping = True
        if self._timer.is_alive():
            self._timer.join(timeout=2.0)
        self.await_quiescence()
        self.dispatcher.shutdown()
        if self._arena_dispatcher is not self.dispatcher:
            self._arena_dispatcher.shutdown()


def run_async(params: EmasParams, objective: Objective, policy: DispatchPolicy,
              stop, recorder: TimelineRecorder, seed: int,
              arena_timeout_s: float = DEFAULT_ARENA_TIMEOUT_S,
              poll_s: float = 0.05) -> AsyncEngine:
    """Run the asynchronous engine to the stop condition.

    The caller's thread acts as the monitor: it samples metrics, checks the
    stop condition, and coordinates the shutdown.
    """
    clock = WallClock()
    engine = AsyncEngine(params, objective, seed, policy,
                         arena_timeout_s=arena_timeout_s)
    entities = engine.bootstrap()
    population, energy = engine.live_stats()
    recorder.record(clock.now_ms(), engine.best_objective,
                    engine.counter.count, population, energy, force=True)
    steps = 0  # the async engine has no step notion; drives no stop bound
    if not stop.should_stop(clock.elapsed_s(), engine.counter.count,
                            engine.best_objective, steps):
        engine.start(entities)
        while True:
            time.sleep(poll_s)
            population, energy = engine.live_stats()
            recorder.record(clock.now_ms(), engine.best_objective,
                            engine.counter.count, population, energy)
            if stop.should_stop(clock.elapsed_s(), engine.counter.count,
                                engine.best_objective, steps):
                break
            if population == 0:
                logger.warning("async population extinct")
                recorder.timeline.extinct = True
                break
    engine.shutdown()
    population, energy = engine.live_stats()
    recorder.flush(clock.now_ms(), engine.best_objective,
                   engine.counter.count, population, energy)
    return engine
