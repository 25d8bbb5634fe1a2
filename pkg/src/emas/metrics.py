"""Metrics collection: timelines, sample buffering, CSV emission.

A timeline is a sequence of per-island samples (elapsed ms, best objective
so far, evaluation count, population size, total energy).  Rows are emitted
on every improvement of the best objective and at the snapshot cadence.
Engines hand samples to a bounded buffer that never blocks them; overflow
drops the oldest samples and counts the drops.
"""

from __future__ import annotations

import csv
import io
import threading
import time
from collections import deque
from dataclasses import dataclass, field

CSV_COLUMNS = ("time_ms", "island", "best_fitness", "evaluations",
               "population", "total_energy")


@dataclass(frozen=True)
class Sample:
    time_ms: int
    island: int
    best: float
    evaluations: int
    population: int
    total_energy: int


@dataclass
class MetricsTimeline:
    """Samples of one island plus run flags."""

    island: int
    samples: list[Sample] = field(default_factory=list)
    extinct: bool = False
    dropped: int = 0

    @property
    def final(self) -> Sample:
        if not self.samples:
            raise ValueError("empty timeline")
        return self.samples[-1]

    def validate(self) -> None:
        """Assert the timeline invariants; raises AssertionError otherwise."""
        last_t = -1
        last_best = float("inf")
        last_evals = -1
        for s in self.samples:
            assert s.time_ms > last_t, f"time not strictly increasing at {s}"
            assert s.best <= last_best, f"best objective increased at {s}"
            assert s.evaluations >= last_evals, f"evaluation count decreased at {s}"
            assert s.population >= 0 and s.total_energy >= 0
            last_t, last_best, last_evals = s.time_ms, s.best, s.evaluations


class WallClock:
    """Milliseconds of wall time since construction."""

    def __init__(self):
        self._t0 = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def elapsed_s(self) -> float:
        return time.monotonic() - self._t0

    def on_step(self) -> None:
        pass


class StepClock:
    """Deterministic clock: one step advances one millisecond.

    Used by reproducibility-sensitive runs so that two runs with the same
    seed and configuration produce byte-identical timelines.
    """

    def __init__(self):
        self._steps = 0

    def now_ms(self) -> int:
        return self._steps

    def elapsed_s(self) -> float:
        return self._steps / 1000.0

    def on_step(self) -> None:
        self._steps += 1


class SampleBuffer:
    """Bounded, non-blocking sample queue shared by islands and the writer.

    Appending never blocks: when full, the oldest sample is dropped and the
    drop counted.
    """

    def __init__(self, maxlen: int = 100_000):
        self._lock = threading.Lock()
        self._deque: deque[Sample] = deque()
        self._maxlen = maxlen
        self.dropped = 0

    def offer(self, sample: Sample) -> None:
        with self._lock:
            if len(self._deque) >= self._maxlen:
                self._deque.popleft()
                self.dropped += 1
            self._deque.append(sample)

    def drain(self) -> list[Sample]:
        with self._lock:
            out = list(self._deque)
            self._deque.clear()
        return out


class TimelineRecorder:
    """Per-island sampling policy: first state, improvements, cadence.

    Successive emitted samples always carry strictly increasing timestamps;
    a wall-clock collision is nudged forward one millisecond.
    """

    def __init__(self, island: int, snapshot_interval_ms: int,
                 buffer: SampleBuffer | None = None):
        self.island = island
        self.interval_ms = snapshot_interval_ms
        self.buffer = buffer
        self.timeline = MetricsTimeline(island=island)
        self._last_time = -1
        self._last_emit_ms: int | None = None
        self._last_best = float("inf")
        self._last_evals = -1

    def _emit(self, time_ms: int, best: float, evals: int, population: int,
              energy: int) -> None:
        if time_ms <= self._last_time:
            time_ms = self._last_time + 1
        sample = Sample(time_ms, self.island, best, evals, population, energy)
        self.timeline.samples.append(sample)
        if self.buffer is not None:
            self.buffer.offer(sample)
        self._last_time = time_ms
        self._last_emit_ms = time_ms
        self._last_best = best
        self._last_evals = evals

    def record(self, time_ms: int, best: float, evals: int, population: int,
               energy: int, force: bool = False) -> None:
        if force or self._last_emit_ms is None:
            self._emit(time_ms, best, evals, population, energy)
            return
        if best < self._last_best:
            self._emit(time_ms, best, evals, population, energy)
        elif time_ms - self._last_emit_ms >= self.interval_ms:
            self._emit(time_ms, best, evals, population, energy)

    def flush(self, time_ms: int, best: float, evals: int, population: int,
              energy: int) -> None:
        """Final sample at stop time, skipped if nothing changed."""
        if evals != self._last_evals or best != self._last_best:
            self._emit(time_ms, best, evals, population, energy)


def format_float(x: float) -> str:
    """Shortest exact decimal form of a float (round-trips bit-for-bit)."""
    return repr(float(x))


def write_csv(path, samples: list[Sample], echo: dict | None = None,
              dropped: int = 0) -> None:
    """Write one run's samples, preceded by the config echo comment."""
    with open(path, "w", newline="") as fh:
        _write_csv_stream(fh, samples, echo, dropped)


def csv_text(samples: list[Sample], echo: dict | None = None,
             dropped: int = 0) -> str:
    buf = io.StringIO()
    _write_csv_stream(buf, samples, echo, dropped)
    return buf.getvalue()


def _write_csv_stream(fh, samples: list[Sample], echo: dict | None,
                      dropped: int) -> None:
    if echo:
        parts = " ".join(f"{k}={v}" for k, v in sorted(echo.items()))
        fh.write(f"# config: {parts}\n")
    if dropped:
        fh.write(f"# dropped_samples: {dropped}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in samples:
        writer.writerow((s.time_ms, s.island, format_float(s.best),
                         s.evaluations, s.population, s.total_energy))


def read_csv(path) -> tuple[dict, list[Sample], list[str]]:
    """Parse a run CSV; returns (config echo, samples, row warnings).

    A malformed header raises ValueError (callers skip the file); malformed
    rows are reported as warnings and skipped.
    """
    echo: dict = {}
    samples: list[Sample] = []
    warnings: list[str] = []
    with open(path, newline="") as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("# ")
                if body.startswith("config:"):
                    for part in body[len("config:"):].split():
                        if "=" in part:
                            k, v = part.split("=", 1)
                            echo[k] = v
                continue
            if header is None:
                header = tuple(line.split(","))
                if header != CSV_COLUMNS:
                    raise ValueError(f"{path}: unexpected header {header}")
                continue
            fields = line.split(",")
            try:
                samples.append(Sample(int(fields[0]), int(fields[1]),
                                      float(fields[2]), int(fields[3]),
                                      int(fields[4]), int(fields[5])))
            except (ValueError, IndexError):
                warnings.append(f"{path}:{lineno}: malformed row skipped")
    if header is None:
        raise ValueError(f"{path}: missing header")
    return echo, samples, warnings


def timelines_from_samples(samples: list[Sample]) -> dict[int, MetricsTimeline]:
    """Split a mixed sample list back into per-island timelines."""
    out: dict[int, MetricsTimeline] = {}
    for s in samples:
        out.setdefault(s.island, MetricsTimeline(island=s.island)).samples.append(s)
    return out
