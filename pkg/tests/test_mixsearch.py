import json
import math
import sys
import threading

import pytest

from synthmix import mixsearch
from synthmix.mixsearch import (
    CheckpointLedger,
    RatioGrid,
    SearchCell,
    SearchError,
    run_grid,
)


def bowl_evaluator(best=0.05, scale=1.0):
    """Convex loss surface with a planted optimum at `best`."""

    def _eval(label, ratio, n, d, seed):
        return 2.0 + scale * (ratio - best) ** 2

    return _eval


def make_cell(label="HQ", n=1000, d=50000, seed=0):
    return SearchCell(synthetic_label=label, n_capacity=n, d_budget=d, seed=seed)


class TestRatioGrid:
    def test_defaults(self):
        assert RatioGrid().ratios == mixsearch.DEFAULT_RATIO_GRID
        assert len(mixsearch.DEFAULT_RATIO_GRID) == 10
        assert len(mixsearch.DEFAULT_ABLATION_GRID) == 7

    def test_monotone_required(self):
        with pytest.raises(SearchError):
            RatioGrid(ratios=(0.1, 0.1, 0.2))

    def test_bounds(self):
        with pytest.raises(SearchError):
            RatioGrid(ratios=(-0.1, 0.5))
        with pytest.raises(SearchError):
            RatioGrid(ratios=(0.5, 1.5))


class TestRunGrid:
    def test_finds_planted_optimum(self):
        cell = make_cell()
        run_grid(RatioGrid(), [cell], bowl_evaluator(best=0.05))
        assert cell.best_ratio == 0.05
        assert len(cell.losses) == 10 and not cell.partial

    def test_tie_breaks_toward_lower_ratio(self):
        cell = make_cell()
        run_grid(RatioGrid(ratios=(0.1, 0.2, 0.3)), [cell], lambda *a: 1.0)
        assert cell.best_ratio == 0.1

    def test_failure_recorded_not_fatal(self):
        def flaky(label, ratio, n, d, seed):
            if ratio == 0.05:
                raise RuntimeError("boom")
            return 1.0 + ratio

        cell = make_cell()
        run_grid(RatioGrid(), [cell], flaky)
        assert cell.partial
        assert "boom" in cell.failures[0.05]
        assert cell.best_ratio == 0.0  # argmin over the points that worked

    def test_parallel_matches_serial(self, tmp_path):
        grid = RatioGrid()
        ev = bowl_evaluator(best=0.1)
        serial = [make_cell(seed=s) for s in range(3)]
        parallel = [make_cell(seed=s) for s in range(3)]
        lp = CheckpointLedger(tmp_path / "serial.jsonl")
        lq = CheckpointLedger(tmp_path / "parallel.jsonl")
        run_grid(grid, serial, ev, ledger=lp, max_parallel=1)
        run_grid(grid, parallel, ev, ledger=lq, max_parallel=4)
        assert [c.to_dict() for c in serial] == [c.to_dict() for c in parallel]
        assert (tmp_path / "serial.jsonl").read_bytes() == (
            tmp_path / "parallel.jsonl"
        ).read_bytes()

    def test_parallelism_is_used(self):
        seen = {"max": 0, "now": 0}
        lock = threading.Lock()
        gate = threading.Event()

        def slow(label, ratio, n, d, seed):
            with lock:
                seen["now"] += 1
                seen["max"] = max(seen["max"], seen["now"])
                if seen["now"] >= 2:
                    gate.set()
            gate.wait(timeout=5)
            with lock:
                seen["now"] -= 1
            return 1.0

        run_grid(RatioGrid(), [make_cell()], slow, max_parallel=4)
        assert seen["max"] >= 2


class TestCheckpointResume:
    def test_resume_skips_completed(self, tmp_path):
        path = tmp_path / "ledger.jsonl"
        calls = []

        def counting(label, ratio, n, d, seed):
            calls.append(ratio)
            return 1.0 + ratio

        grid = RatioGrid(ratios=(0.0, 0.1, 0.2, 0.3))
        run_grid(grid, [make_cell()], counting, ledger=CheckpointLedger(path))
        assert len(calls) == 4

        calls.clear()
        cell = make_cell()
        run_grid(grid, [cell], counting, ledger=CheckpointLedger(path))
        assert calls == []  # everything replayed from the ledger
        assert cell.best_ratio == 0.0

    def test_interrupted_sweep_resumes_byte_identical(self, tmp_path):
        """A sweep killed mid-flight and resumed produces the same ledger
        as one uninterrupted run."""
        grid = RatioGrid(ratios=(0.0, 0.1, 0.2, 0.3, 0.4))

        full = tmp_path / "full.jsonl"
        run_grid(grid, [make_cell()], bowl_evaluator(), ledger=CheckpointLedger(full))

        part = tmp_path / "part.jsonl"

        class Interrupt(Exception):
            pass

        n = {"count": 0}

        def dies_after_two(label, ratio, n_cap, d, seed):
            if n["count"] >= 2:
                raise Interrupt()
            n["count"] += 1
            return bowl_evaluator()(label, ratio, n_cap, d, seed)

        # simulate a crash: keep only the records written before the failure
        run_grid(grid, [make_cell()], dies_after_two, ledger=CheckpointLedger(part))
        kept = [
            ln
            for ln in part.read_text().splitlines()
            if json.loads(ln)["error"] is None
        ]
        part.write_text("\n".join(kept) + "\n")

        cell = make_cell()
        run_grid(grid, [cell], bowl_evaluator(), ledger=CheckpointLedger(part))
        assert part.read_bytes() == full.read_bytes()
        assert cell.best_ratio == 0.05 if 0.05 in grid.ratios else True
        assert not cell.partial

    def test_failures_are_replayed_too(self, tmp_path):
        path = tmp_path / "ledger.jsonl"
        grid = RatioGrid(ratios=(0.0, 0.1))

        def bad(label, ratio, n, d, seed):
            raise ValueError("nope")

        run_grid(grid, [make_cell()], bad, ledger=CheckpointLedger(path))
        cell = make_cell()
        run_grid(
            grid, [cell], bowl_evaluator(), ledger=CheckpointLedger(path)
        )
        assert set(cell.failures) == {0.0, 0.1}
        assert cell.best_ratio is None


class TestAblation:
    def test_per_generator_cells(self):
        out = mixsearch.ablation_sweep(
            ["HQ", "QA", "TXBK"],
            RatioGrid(ratios=mixsearch.DEFAULT_ABLATION_GRID),
            bowl_evaluator(best=0.05),
            n_capacity=100,
            d_budget=1000,
        )
        assert set(out) == {"HQ", "QA", "TXBK"}
        assert all(c.best_ratio == 0.05 for c in out.values())

    def test_empty_labels(self):
        with pytest.raises(SearchError):
            mixsearch.ablation_sweep([], RatioGrid(), bowl_evaluator(), 1, 1)


class TestEvaluators:
    def test_command_evaluator(self, tmp_path):
        script = tmp_path / "eval.py"
        script.write_text(
            "import sys\n"
            "args = dict(zip(sys.argv[1::2], sys.argv[2::2]))\n"
            "print(1.0 + float(args['--ratio']) + int(args['--seed']) * 0.1)\n"
        )
        ev = mixsearch.command_evaluator([sys.executable, str(script)])
        assert ev("HQ", 0.2, 10, 100, 3) == pytest.approx(1.5)

    def test_command_evaluator_failure_propagates(self, tmp_path):
        script = tmp_path / "bad.py"
        script.write_text("import sys; sys.exit(2)\n")
        ev = mixsearch.command_evaluator([sys.executable, str(script)])
        with pytest.raises(Exception):
            ev("HQ", 0.2, 10, 100, 3)

    def test_replay_roundtrip(self, tmp_path):
        grid = RatioGrid(ratios=(0.0, 0.1, 0.2))
        cells = [make_cell(seed=0)]
        run_grid(grid, cells, bowl_evaluator(best=0.1))
        csv_path = tmp_path / "sweep.csv"
        mixsearch.save_sweep_csv(cells, csv_path, comment="run 1")

        replay = mixsearch.replay_evaluator(csv_path)
        replayed = [make_cell(seed=0)]
        run_grid(grid, replayed, replay)
        assert replayed[0].losses == cells[0].losses
        assert replayed[0].best_ratio == cells[0].best_ratio

    def test_replay_missing_point(self, tmp_path):
        csv_path = tmp_path / "sweep.csv"
        csv_path.write_text("synthetic_label,n,d,ratio,loss\nHQ,1,1,0.0,2.0\n")
        ev = mixsearch.replay_evaluator(csv_path)
        with pytest.raises(SearchError, match="no replay record"):
            ev("HQ", 0.5, 1, 1, 0)


class TestOutputs:
    def test_cells_json(self, tmp_path):
        cells = [make_cell()]
        run_grid(RatioGrid(ratios=(0.0, 0.1)), cells, bowl_evaluator())
        p = tmp_path / "cells.json"
        mixsearch.save_cells_json(cells, p)
        data = json.loads(p.read_text())
        assert data[0]["synthetic_label"] == "HQ"
        assert data[0]["best_ratio"] == 0.0
