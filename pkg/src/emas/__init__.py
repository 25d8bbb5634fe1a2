"""Energy-based evolutionary multi-agent optimization engine.

Selection is decentralized: agents carry life energy, fights move energy
from worse to better solutions, energy above a threshold enables
reproduction, and agents at zero energy die.  The package provides a fast
synchronous engine, an asynchronous message-passing engine with pluggable
dispatch policies, an island model with in-process and TCP migration, and a
benchmark harness with reproducible seeding and CSV metrics.
"""

from .core import (ActionContract, Agent, AgentState, ContractViolationError,
                   EmasError, EmasParams, IdSource, NoNeighborError, Snapshot,
                   Solution, StructuralError, TypeTag, ViolationReport,
                   check_action, die_contract, fight_contract, find_ag,
                   reproduction_contract, snapshot_of, subsumes, total_energy)
from .operators import (EvaluationCounter, Objective, crossover, fitness,
                        make_child, make_objective, mutate, mutation_sigma,
                        random_solution, rastrigin)
from .rng import RNG_ALGORITHM, seed_rng
from .sync_engine import (ArenaKind, SyncEngine, choose_arena, death_meeting,
                          fight_meeting, reproduction_meeting, run_sync, step)
from .config import RunConfig, StopCondition, parse_duration
from .metrics import (MetricsTimeline, Sample, SampleBuffer, StepClock,
                      TimelineRecorder, WallClock, read_csv, write_csv)
from .islands import (Island, InProcessTransport, MigrationEnvelope, deliver,
                      find_loc, migration_phase, neighbors_for, run_cluster,
                      run_tcp_node)
from .async_engine import AsyncEngine, DispatchPolicy, run_async

__version__ = "0.1.0"
