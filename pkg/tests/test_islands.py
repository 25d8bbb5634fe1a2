import numpy as np
import pytest

from emas.config import StopCondition
from emas.core import EmasParams, NoNeighborError, total_energy
from emas.islands import (InProcessTransport, Island,
                          MigrationEnvelope, deliver, envelope_for, find_loc,
                          migration_phase, neighbors_for, run_cluster)
from emas.metrics import StepClock, TimelineRecorder
from emas.operators import make_objective
from emas.rng import seed_rng
from emas.sync_engine import SyncEngine, run_sync

from conftest import agent_with, linear_objective


def make_island(island_id, neighbors, population, params=None, seed=0):
    params = params or EmasParams(problem_size=1)
    engine = SyncEngine(params, linear_objective(), seed=seed, island=island_id)
    engine.population = list(population)
    if population:
        engine.observe_population()
    return Island(island_id, tuple(neighbors), engine)


class TestNeighbors:
    def test_ring_of_four(self):
        assert set(neighbors_for(0, [0, 1, 2, 3], "ring")) == {1, 3}
        assert set(neighbors_for(2, [0, 1, 2, 3], "ring")) == {1, 3}

    def test_ring_of_two_collapses(self):
        assert neighbors_for(0, [0, 1], "ring") == (1,)

    def test_complete(self):
        assert set(neighbors_for(1, [0, 1, 2, 3], "complete")) == {0, 2, 3}

    def test_self_neighbor_rejected(self):
        with pytest.raises(Exception):
            Island(0, (0, 1), SyncEngine(EmasParams(problem_size=1),
                                         linear_objective(), 0))


class TestFindLoc:
    def test_forced(self):
        island = make_island(0, [5], [])
        assert find_loc(island, seed_rng(0, "fl")) == 5

    def test_empty_neighbors(self):
        island = make_island(0, [], [])
        with pytest.raises(NoNeighborError):
            find_loc(island, seed_rng(0, "fl"))

    def test_uniform(self):
        island = make_island(0, [1, 2, 3], [])
        rng = seed_rng(21, "fl-uniform")
        draws = 30_000
        counts = {1: 0, 2: 0, 3: 0}
        for _ in range(draws):
            counts[find_loc(island, rng)] += 1
        for c in counts.values():
            assert abs(c / draws - 1 / 3) < 0.02


class TestMigrationPhase:
    def test_probability_zero_no_envelopes(self):
        params = EmasParams(problem_size=1, migration_probability=0.0)
        pop = [agent_with(float(i), 5, i) for i in range(10)]
        island = make_island(0, [1], pop, params)
        out = migration_phase(island, params, [0, 1], "topology",
                              seed_rng(0, "mp"))
        assert out == []
        assert len(island.engine.population) == 10

    def test_binomial_event_count(self):
        params = EmasParams(problem_size=1, migration_probability=0.001)
        rng = seed_rng(31, "mp-binomial")
        island = make_island(0, [1], [], params)
        events = 0
        pop = [agent_with(float(i), 5, i) for i in range(100)]
        for _ in range(10_000):
            island.engine.population = list(pop)
            events += len(migration_phase(island, params, [0, 1], "topology", rng))
        assert abs(events - 1000) <= 100

    def test_single_island_experiment_mode_is_noop(self):
        params = EmasParams(problem_size=1, migration_probability=0.5)
        pop = [agent_with(float(i), 5, i) for i in range(40)]
        island = make_island(0, [], pop, params)
        out = migration_phase(island, params, [0], "experiment",
                              seed_rng(1, "mp"))
        assert out == []
        assert len(island.engine.population) == 40

    def test_energy_gate(self):
        params = EmasParams(problem_size=1, migration_probability=1.0,
                            migration_energy_min=5)
        pop = [agent_with(1.0, 5, 1), agent_with(2.0, 6, 2)]
        island = make_island(0, [1], pop, params)
        out = migration_phase(island, params, [0, 1], "topology",
                              seed_rng(2, "mp"))
        assert [e.agent_id for e in out] == [2]  # only en > 5 may leave
        assert [a.id for a in island.engine.population] == [1]

    def test_envelope_carries_full_state(self):
        agent = agent_with(3.25, 7, 11, dimension=4)
        env = envelope_for(agent, source=0, destination=2)
        assert env.energy == 7
        assert env.cached_fitness == agent.fitness
        back = env.to_agent()
        assert back.id == 11 and back.en == 7
        assert np.array_equal(back.sol.values, agent.sol.values)


class TestTransport:
    def test_unknown_destination_returns_agent(self):
        transport = InProcessTransport()
        transport.register(0)
        params = EmasParams(problem_size=1)
        island = make_island(0, [1], [], params)
        env = envelope_for(agent_with(1.0, 5, 99), 0, 7)
        assert not deliver(env, transport, island)
        assert [a.id for a in island.engine.population] == [99]

    def test_delivery_before_next_step(self):
        transport = InProcessTransport()
        transport.register(0)
        transport.register(1)
        islands = {
            0: make_island(0, [1], [agent_with(1.0, 5, 1)]),
            1: make_island(1, [0], [agent_with(2.0, 5, 2)]),
        }
        env = envelope_for(agent_with(3.0, 4, 3), 0, 1)
        transport.send(env)
        assert transport.in_flight_energy() == 4
        transport.deliver_pending(islands)
        assert transport.in_flight_energy() == 0
        assert {a.id for a in islands[1].engine.population} == {2, 3}

    def test_deterministic_delivery_order(self):
        transport = InProcessTransport()
        transport.register(1)
        islands = {1: make_island(1, [], [])}
        for agent_id, source in ((9, 2), (4, 0), (7, 0)):
            transport.send(MigrationEnvelope(agent_id, 1, np.zeros(1), 0.0,
                                             source, 1))
        transport.deliver_pending(islands)
        ids = [a.id for a in islands[1].engine.population]
        assert ids == [4, 7, 9]  # sorted by (source, agent id)


class TestRunCluster:
    def test_single_island_matches_run_sync(self):
        params = EmasParams(initial_size=15, problem_size=4)
        obj = make_objective("rastrigin", 4)
        stop = StopCondition(max_steps=300)

        solo = TimelineRecorder(0, 50)
        run_sync(params, obj, stop, solo, seed=17, clock=StepClock())

        recorders, _, _ = run_cluster(params, obj, 1, "experiment", stop,
                                      seed=17, snapshot_interval_s=0.05,
                                      time_source="steps")
        cluster_tl = recorders[0].timeline
        key = lambda tl: [(s.best, s.evaluations, s.population, s.total_energy)
                          for s in tl.samples]
        assert key(cluster_tl) == key(solo.timeline)

    def test_global_energy_conserved(self):
        params = EmasParams(initial_size=10, initial_energy=8, problem_size=3,
                            migration_probability=0.05)
        obj = make_objective("rastrigin", 3)
        recorders, islands, transport = run_cluster(
            params, obj, 3, "experiment", StopCondition(max_steps=400),
            seed=3, time_source="steps")
        live = sum(total_energy(islands[i].engine.population) for i in islands)
        assert live + transport.in_flight_energy() == 3 * 10 * 8

    def test_no_agent_duplication(self):
        params = EmasParams(initial_size=8, initial_energy=6, problem_size=3,
                            migration_probability=0.05,
                            reproduction_threshold=7,
                            reproduction_transfer=3, fight_transfer=4)
        obj = make_objective("rastrigin", 3)
        recorders, islands, transport = run_cluster(
            params, obj, 3, "complete", StopCondition(max_steps=300),
            seed=5, time_source="steps")
        ids = [a.id for i in islands for a in islands[i].engine.population]
        assert len(ids) == len(set(ids))

    def test_topology_respected(self):
        params = EmasParams(initial_size=10, problem_size=2,
                            migration_probability=0.2)
        obj = make_objective("rastrigin", 2)

        observed = []
        original_send = InProcessTransport.send

        class SpyTransport(InProcessTransport):
            def send(self, envelope):
                observed.append((envelope.source, envelope.destination))
                original_send(self, envelope)

        import emas.islands as islands_mod
        real = islands_mod.InProcessTransport
        islands_mod.InProcessTransport = SpyTransport
        try:
            run_cluster(params, obj, 4, "ring", StopCondition(max_steps=150),
                        seed=9, time_source="steps")
        finally:
            islands_mod.InProcessTransport = real
        assert observed, "expected at least one migration"
        edges = {(i, n) for i in range(4)
                 for n in neighbors_for(i, [0, 1, 2, 3], "ring")}
        assert set(observed) <= edges

    def test_deterministic_multi_island(self):
        params = EmasParams(initial_size=10, problem_size=3,
                            migration_probability=0.05)
        obj = make_objective("rastrigin", 3)

        def run_once():
            recorders, _, _ = run_cluster(params, obj, 3, "experiment",
                                          StopCondition(max_steps=250),
                                          seed=77, time_source="steps")
            return [(s.time_ms, s.island, s.best, s.evaluations, s.population,
                     s.total_energy)
                    for i in sorted(recorders)
                    for s in recorders[i].timeline.samples]

        assert run_once() == run_once()
