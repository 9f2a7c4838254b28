"""Mixture-ratio grid search and generator-ablation sweeps.

Every (cell, ratio) evaluation is checkpointed to an append-only jsonl
ledger the moment it completes, so an interrupted sweep resumes without
recomputing anything. The evaluator is pluggable: an in-process callable,
an external command reading a loss from stdout, or a replay of a
precomputed CSV.
"""

from __future__ import annotations

import csv
import json
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

DEFAULT_RATIO_GRID = (0.0, 0.005, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.50, 1.0)
# The ablation sweep's source prose says "eight exponentially spaced
# points" but enumerates seven; the seven listed values are implemented.
DEFAULT_ABLATION_GRID = (0.005, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20)

Evaluator = Callable[[str, float, int, int, int], float]
# (synthetic_label, ratio, n_capacity, d_budget, seed) -> loss_nats


class SearchError(Exception):
    pass


@dataclass(frozen=True)
class RatioGrid:
    ratios: Tuple[float, ...] = DEFAULT_RATIO_GRID

    def __post_init__(self):
        if not self.ratios:
            raise SearchError("empty grid")
        if any(b <= a for a, b in zip(self.ratios, self.ratios[1:])):
            raise SearchError("ratios must be strictly increasing")
        if self.ratios[0] < 0.0 or self.ratios[-1] > 1.0:
            raise SearchError("ratios must lie in [0,1]")


@dataclass
class SearchCell:
    synthetic_label: str
    n_capacity: int
    d_budget: int
    seed: int
    losses: Dict[float, float] = field(default_factory=dict)
    failures: Dict[float, str] = field(default_factory=dict)
    best_ratio: Optional[float] = None

    @property
    def key(self) -> str:
        return f"{self.synthetic_label}|{self.n_capacity}|{self.d_budget}|{self.seed}"

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def finalize(self) -> None:
        if self.losses:
            # argmin; ties broken toward the lower synthetic fraction
            self.best_ratio = min(
                self.losses, key=lambda r: (self.losses[r], r)
            )

    def to_dict(self) -> dict:
        return {
            "synthetic_label": self.synthetic_label,
            "n_capacity": self.n_capacity,
            "d_budget": self.d_budget,
            "seed": self.seed,
            "losses": {repr(r): v for r, v in sorted(self.losses.items())},
            "failures": {repr(r): v for r, v in sorted(self.failures.items())},
            "best_ratio": self.best_ratio,
            "partial": self.partial,
        }


class CheckpointLedger:
    """Append-only jsonl of completed (cell, ratio) evaluations."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._seen: Dict[Tuple[str, float], dict] = {}
        if self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._seen[(rec["cell"], rec["ratio"])] = rec

    def get(self, cell_key: str, ratio: float) -> Optional[dict]:
        return self._seen.get((cell_key, ratio))

    def record(self, cell_key: str, ratio: float, loss: Optional[float],
               error: Optional[str]) -> None:
        rec = {"cell": cell_key, "ratio": ratio, "loss": loss, "error": error}
        self._seen[(cell_key, ratio)] = rec
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def run_grid(
    grid: RatioGrid,
    cells: Sequence[SearchCell],
    evaluator: Evaluator,
    ledger: Optional[CheckpointLedger] = None,
    max_parallel: int = 1,
) -> List[SearchCell]:
    """Evaluate every (cell, ratio) exactly once; failures are recorded
    per-point and never abort other cells."""
    pending: List[Tuple[SearchCell, float]] = []
    for cell in cells:
        for ratio in grid.ratios:
            if ledger is not None:
                prior = ledger.get(cell.key, ratio)
                if prior is not None:
                    if prior["error"] is None:
                        cell.losses[ratio] = prior["loss"]
                    else:
                        cell.failures[ratio] = prior["error"]
                    continue
            pending.append((cell, ratio))

    def _eval(job):
        cell, ratio = job
        try:
            loss = evaluator(
                cell.synthetic_label, ratio, cell.n_capacity, cell.d_budget, cell.seed
            )
            return cell, ratio, float(loss), None
        except Exception as exc:  # noqa: BLE001 - recorded, not raised
            return cell, ratio, None, f"{type(exc).__name__}: {exc}"

    def _commit(result) -> None:
        # checkpoint each point the moment its result is in hand, in
        # submission order, so a killed sweep loses at most in-flight work
        # and the ledger bytes are deterministic
        cell, ratio, loss, error = result
        if error is None:
            cell.losses[ratio] = loss
        else:
            cell.failures[ratio] = error
        if ledger is not None:
            ledger.record(cell.key, ratio, loss, error)

    if max_parallel > 1 and pending:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            futures = [pool.submit(_eval, job) for job in pending]
            for future in futures:
                _commit(future.result())
    else:
        for job in pending:
            _commit(_eval(job))

    for cell in cells:
        cell.finalize()
    return list(cells)


def ablation_sweep(
    generator_labels: Sequence[str],
    grid: RatioGrid,
    evaluator: Evaluator,
    n_capacity: int,
    d_budget: int,
    seed: int = 0,
    ledger: Optional[CheckpointLedger] = None,
    max_parallel: int = 1,
) -> Dict[str, SearchCell]:
    """Full cross of generator label x ratio at one (capacity, budget)."""
    if not generator_labels:
        raise SearchError("no generator labels")
    cells = [
        SearchCell(
            synthetic_label=label, n_capacity=n_capacity, d_budget=d_budget, seed=seed
        )
        for label in generator_labels
    ]
    run_grid(grid, cells, evaluator, ledger=ledger, max_parallel=max_parallel)
    return {c.synthetic_label: c for c in cells}


def command_evaluator(command: Sequence[str]) -> Evaluator:
    """Spawn a command per evaluation; the loss is its stdout as a decimal.

    The point's parameters are appended as --label/--ratio/--n/--d/--seed.
    """

    def _run(label: str, ratio: float, n: int, d: int, seed: int) -> float:
        argv = list(command) + [
            "--label", label, "--ratio", repr(ratio),
            "--n", str(n), "--d", str(d), "--seed", str(seed),
        ]
        proc = subprocess.run(argv, capture_output=True, text=True, check=True)
        return float(proc.stdout.strip())

    return _run


def replay_evaluator(csv_path: str | Path) -> Evaluator:
    """Serve losses from a precomputed sweep CSV."""
    table: Dict[Tuple[str, float, int, int], float] = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader((ln for ln in fh if not ln.startswith("#"))):
            key = (
                row["synthetic_label"],
                float(row["ratio"]),
                int(row["n"]),
                int(row["d"]),
            )
            table[key] = float(row["loss"])

    def _lookup(label: str, ratio: float, n: int, d: int, seed: int) -> float:
        try:
            return table[(label, ratio, n, d)]
        except KeyError:
            raise SearchError(
                f"no replay record for ({label}, {ratio}, {n}, {d})"
            ) from None

    return _lookup


def save_sweep_csv(cells: Sequence[SearchCell], path: str | Path,
                   comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["synthetic_label", "n", "d", "ratio", "loss"])
        for cell in cells:
            for ratio, loss in sorted(cell.losses.items()):
                writer.writerow(
                    [cell.synthetic_label, cell.n_capacity, cell.d_budget,
                     repr(ratio), repr(loss)]
                )


def save_cells_json(cells: Sequence[SearchCell], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([c.to_dict() for c in cells], indent=2, sort_keys=True)
    )
