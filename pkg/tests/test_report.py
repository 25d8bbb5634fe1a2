import pytest

from emas.metrics import Sample, write_csv
from emas.report import load_run, load_runs, summary_table, write_series


def _write_run(path, seed, samples):
    write_csv(path, samples, echo={"seed": seed, "engine": "sync",
                                   "problem_size": 4})


@pytest.fixture
def run_file(tmp_path):
    path = tmp_path / "run.csv"
    _write_run(path, 1, [
        Sample(0, 0, 100.0, 50, 50, 500),
        Sample(1000, 0, 40.0, 900, 52, 500),
        Sample(2000, 0, 12.5, 1800, 49, 500),
    ])
    return path


class TestLoadRun:
    def test_single_run_summary_equals_final_sample(self, run_file):
        run = load_run(run_file)
        assert run.final_best == 12.5
        assert run.total_evaluations == 1800
        assert run.duration_ms == 2000
        assert run.seed == "1"

    def test_multi_island_aggregates(self, tmp_path):
        path = tmp_path / "cluster.csv"
        _write_run(path, 2, [
            Sample(0, 0, 80.0, 50, 50, 500),
            Sample(0, 1, 60.0, 50, 50, 500),
            Sample(900, 0, 20.0, 800, 50, 500),
            Sample(901, 1, 10.0, 700, 50, 500),
        ])
        run = load_run(path)
        assert run.final_best == pytest.approx(15.0)   # mean of island finals
        assert run.global_best == 10.0
        assert run.total_evaluations == 1500

    def test_unreadable_files_skipped(self, tmp_path, run_file):
        bad = tmp_path / "bad.csv"
        bad.write_text("alpha,beta\n1,2\n")
        runs = load_runs([run_file, bad])
        assert len(runs) == 1


class TestSummaryTable:
    def test_groups_by_scenario_not_seed(self, tmp_path):
        paths = []
        for seed, final in ((1, 10.0), (2, 20.0)):
            p = tmp_path / f"r{seed}.csv"
            _write_run(p, seed, [Sample(0, 0, 100.0, 50, 50, 500),
                                 Sample(500, 0, final, 600, 50, 500)])
            paths.append(p)
        table = summary_table(load_runs(paths))
        lines = table.splitlines()
        assert "mean_final" in lines[0]
        rows = lines[2:]
        assert len(rows) == 1  # one scenario
        assert "15" in rows[0]  # mean of 10 and 20

    def test_series_written(self, tmp_path, run_file):
        runs = load_runs([run_file])
        written = write_series(runs, str(tmp_path / "series"))
        assert len(written) == 2
        fitness = [p for p in written if "fitness" in p][0]
        rows = [l for l in open(fitness).read().splitlines()
                if l and not l.startswith("#")]
        first_t, first_v = rows[0].split()
        last_t, last_v = rows[-1].split()
        assert float(first_v) == 100.0
        assert float(last_v) == 12.5
        assert float(last_t) == 2000.0
