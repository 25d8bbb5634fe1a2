import threading

import pytest

from emas.metrics import (CSV_COLUMNS, MetricsTimeline, Sample, SampleBuffer,
                          StepClock, TimelineRecorder, WallClock, csv_text,
                          format_float, read_csv, timelines_from_samples,
                          write_csv)


class TestRecorder:
    def test_first_sample_always_emitted(self):
        rec = TimelineRecorder(0, 1000)
        rec.record(0, 10.0, 50, 50, 500, force=True)
        assert len(rec.timeline.samples) == 1

    def test_improvement_emits(self):
        rec = TimelineRecorder(0, 10_000)
        rec.record(0, 10.0, 50, 50, 500, force=True)
        rec.record(5, 9.0, 60, 50, 500)
        assert len(rec.timeline.samples) == 2

    def test_cadence_emits_without_improvement(self):
        rec = TimelineRecorder(0, 100)
        rec.record(0, 10.0, 50, 50, 500, force=True)
        rec.record(50, 10.0, 60, 50, 500)      # too soon, no improvement
        rec.record(101, 10.0, 70, 50, 500)     # interval elapsed
        assert [s.time_ms for s in rec.timeline.samples] == [0, 101]

    def test_flush_skips_when_unchanged(self):
        rec = TimelineRecorder(0, 100)
        rec.record(0, 10.0, 50, 50, 500, force=True)
        rec.flush(5, 10.0, 50, 50, 500)
        assert len(rec.timeline.samples) == 1
        rec.flush(6, 10.0, 55, 48, 500)
        assert len(rec.timeline.samples) == 2

    def test_time_collisions_bumped(self):
        rec = TimelineRecorder(0, 1)
        rec.record(7, 10.0, 50, 50, 500, force=True)
        rec.record(7, 9.0, 60, 50, 500)
        rec.record(7, 8.0, 70, 50, 500)
        times = [s.time_ms for s in rec.timeline.samples]
        assert times == [7, 8, 9]
        rec.timeline.validate()


class TestTimelineValidate:
    def test_catches_increasing_best(self):
        tl = MetricsTimeline(island=0, samples=[
            Sample(0, 0, 5.0, 10, 5, 50), Sample(1, 0, 6.0, 12, 5, 50)])
        with pytest.raises(AssertionError):
            tl.validate()

    def test_catches_nonmonotone_time(self):
        tl = MetricsTimeline(island=0, samples=[
            Sample(5, 0, 5.0, 10, 5, 50), Sample(5, 0, 4.0, 12, 5, 50)])
        with pytest.raises(AssertionError):
            tl.validate()

    def test_catches_decreasing_evals(self):
        tl = MetricsTimeline(island=0, samples=[
            Sample(0, 0, 5.0, 10, 5, 50), Sample(1, 0, 4.0, 8, 5, 50)])
        with pytest.raises(AssertionError):
            tl.validate()


class TestSampleBuffer:
    def test_drop_oldest_on_overflow(self):
        buf = SampleBuffer(maxlen=3)
        for i in range(5):
            buf.offer(Sample(i, 0, 1.0, i, 1, 1))
        drained = buf.drain()
        assert [s.time_ms for s in drained] == [2, 3, 4]
        assert buf.dropped == 2

    def test_concurrent_offers_serialize(self):
        buf = SampleBuffer(maxlen=100_000)

        def feed(island):
            for i in range(1000):
                buf.offer(Sample(i, island, 1.0, i, 1, 1))

        threads = [threading.Thread(target=feed, args=(k,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        drained = buf.drain()
        assert len(drained) == 8000
        assert buf.dropped == 0
        per_island = timelines_from_samples(drained)
        # per-sender order is preserved
        for tl in per_island.values():
            times = [s.time_ms for s in tl.samples]
            assert times == sorted(times)


class TestCsv:
    def _samples(self):
        return [Sample(0, 0, 1543.25, 50, 50, 500),
                Sample(1000, 0, 900.5, 1200, 52, 500),
                Sample(1500, 1, 870.125, 800, 48, 500)]

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "run.csv"
        write_csv(path, self._samples(), echo={"seed": 1, "engine": "sync"})
        echo, samples, warnings = read_csv(path)
        assert echo == {"seed": "1", "engine": "sync"}
        assert warnings == []
        assert samples == self._samples()

    def test_float_format_roundtrips_exactly(self):
        value = 0.1 + 0.2  # classic non-representable sum
        assert float(format_float(value)) == value

    def test_malformed_rows_warned_and_skipped(self, tmp_path):
        path = tmp_path / "run.csv"
        text = csv_text(self._samples(), echo={"seed": 2})
        lines = text.splitlines()
        lines.insert(3, "garbage,row")
        path.write_text("\n".join(lines) + "\n")
        echo, samples, warnings = read_csv(path)
        assert len(samples) == 3
        assert len(warnings) == 1

    def test_bad_header_raises(self, tmp_path):
        path = tmp_path / "run.csv"
        path.write_text("time,island\n1,2\n")
        with pytest.raises(ValueError):
            read_csv(path)

    def test_header_order_pinned(self):
        text = csv_text(self._samples())
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)

    def test_drops_reported_in_output(self):
        text = csv_text(self._samples(), dropped=3)
        assert "# dropped_samples: 3" in text.splitlines()[0]


class TestClocks:
    def test_step_clock_counts_steps(self):
        clock = StepClock()
        assert clock.now_ms() == 0
        clock.on_step()
        clock.on_step()
        assert clock.now_ms() == 2
        assert clock.elapsed_s() == 0.002

    def test_wall_clock_monotone(self):
        clock = WallClock()
        a = clock.now_ms()
        b = clock.now_ms()
        assert b >= a >= 0
