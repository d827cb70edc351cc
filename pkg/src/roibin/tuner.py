"""Black-box autotuner for thread allocations and task counts.

The search minimizes a measured objective (wall seconds per evaluation,
median of three runs).  Strategy: when the budget covers the whole space it
is enumerated; otherwise the first half of the budget is spent on a
Latin-hypercube-style spread and the rest on coordinate descent around the
incumbent.  Everything is reproducible from the seed.
"""

from __future__ import annotations

import json
import math
import platform
import random
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import ConfigError, TuningError

TASKS_DIM = "tasks"


@dataclass(frozen=True)
class TuneSpace:
    """Ordered integer ranges, one per tunable dimension (inclusive bounds)."""

    dims: tuple[tuple[str, int, int], ...]

    def __post_init__(self) -> None:
        if not self.dims:
            raise ConfigError("tune space needs at least one dimension")
        seen = set()
        for name, lo, hi in self.dims:
            if lo > hi:
                raise ConfigError(f"dimension {name} has empty range [{lo}, {hi}]")
            if name in seen:
                raise ConfigError(f"duplicate dimension {name}")
            seen.add(name)

    @staticmethod
    def default(max_tasks: int = 40, max_threads: int = 8) -> "TuneSpace":
        stages = ("roi", "bin", "codec", "roi_codec")
        return TuneSpace(
            dims=((TASKS_DIM, 1, max_tasks),)
            + tuple((s, 1, max_threads) for s in stages)
        )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.dims)

    def size(self) -> int:
        n = 1
        for _, lo, hi in self.dims:
            n *= hi - lo + 1
        return n

    def non_task_size(self) -> int:
        n = 1
        for name, lo, hi in self.dims:
            if name != TASKS_DIM:
                n *= hi - lo + 1
        return n

    def contains(self, assignment: Mapping[str, int]) -> bool:
        return all(lo <= assignment.get(name, lo) <= hi
                   for name, lo, hi in self.dims)


@dataclass(frozen=True)
class TuneBudget:
    max_evals: int
    early_stop: bool = False

    def __post_init__(self) -> None:
        if self.max_evals < 1:
            raise ConfigError("max_evals must be >= 1")

    @staticmethod
    def for_space(space: TuneSpace) -> "TuneBudget":
        # sqrt of the non-task configuration space, floored at 8 evaluations.
        n = space.non_task_size()
        return TuneBudget(max_evals=max(8, math.ceil(math.sqrt(n))))


@dataclass(frozen=True)
class Trial:
    assignment: tuple[int, ...]
    seconds: float  # median of the samples; inf if infeasible
    samples: tuple[float, ...]
    feasible: bool


@dataclass(frozen=True)
class TunedAllocation:
    assignment: dict[str, int]
    objective: float
    trials: tuple[Trial, ...]
    space: TuneSpace
    seed: int

    def assignment_tuple(self) -> tuple[int, ...]:
        return tuple(self.assignment[name] for name in self.space.names)


def _median3(values: Sequence[float]) -> float:
    s = sorted(values)
    return s[len(s) // 2]


def tune(
    space: TuneSpace,
    objective: Callable[[dict[str, int]], float],
    budget: TuneBudget | None = None,
    seed: int = 0,
    measurements: int = 3,
) -> TunedAllocation:
    """Search the space for the assignment with minimum median time.

    One "evaluation" is the median of ``measurements`` objective calls on one
    assignment.  An objective that raises marks that assignment infeasible;
    if every evaluated assignment is infeasible, TuningError is raised.
    """
    if budget is None:
        budget = TuneBudget.for_space(space)
    rng = random.Random(seed)
    names = space.names
    ranges = [(lo, hi) for _, lo, hi in space.dims]
    trials: list[Trial] = []
    evaluated: dict[tuple[int, ...], float] = {}

    def evaluate(point: tuple[int, ...]) -> float:
        samples = []
        feasible = True
        for _ in range(measurements):
            try:
                samples.append(float(objective(dict(zip(names, point)))))
            except Exception:
                feasible = False
                break
        med = _median3(samples) if feasible else math.inf
        trials.append(Trial(assignment=point, seconds=med,
                            samples=tuple(samples), feasible=feasible))
        evaluated[point] = med
        return med

    def budget_left() -> int:
        return budget.max_evals - len(evaluated)

    total = space.size()
    if budget.max_evals >= total:
        point = [lo for lo, _ in ranges]
        while True:
            evaluate(tuple(point))
            i = len(point) - 1
            while i >= 0:
                point[i] += 1
                if point[i] <= ranges[i][1]:
                    break
                point[i] = ranges[i][0]
                i -= 1
            if i < 0:
                break
    else:
        n_spread = max(1, budget.max_evals // 2)
        columns = []
        for lo, hi in ranges:
            span = hi - lo + 1
            col = [lo + (k * span) // n_spread + rng.randrange(
                max(1, ((k + 1) * span) // n_spread - (k * span) // n_spread))
                for k in range(n_spread)]
            col = [min(hi, v) for v in col]
            rng.shuffle(col)
            columns.append(col)
        for k in range(n_spread):
            point = tuple(col[k] for col in columns)
            while point in evaluated:
                point = tuple(rng.randint(lo, hi) for lo, hi in ranges)
                if len(evaluated) >= total:
                    break
            if point not in evaluated:
                evaluate(point)
            if budget_left() <= 0:
                break

        # Coordinate descent around the incumbent.
        while budget_left() > 0 and len(evaluated) < total:
            feasible_pts = {p: v for p, v in evaluated.items()
                            if v != math.inf}
            if not feasible_pts:
                # explore blindly
                point = tuple(rng.randint(lo, hi) for lo, hi in ranges)
                if point not in evaluated:
                    evaluate(point)
                continue
            incumbent = min(feasible_pts, key=lambda p: (feasible_pts[p], p))
            improved = False
            for axis in range(len(ranges)):
                for delta in (1, -1):
                    if budget_left() <= 0:
                        break
                    cand = list(incumbent)
                    cand[axis] += delta
                    lo, hi = ranges[axis]
                    if not lo <= cand[axis] <= hi:
                        continue
                    cand_t = tuple(cand)
                    if cand_t in evaluated:
                        continue
                    if evaluate(cand_t) < feasible_pts[incumbent]:
                        improved = True
                        break
                if improved or budget_left() <= 0:
                    break
            if not improved and budget_left() > 0:
                # incumbent is locally explored; jump somewhere fresh
                for _ in range(64):
                    point = tuple(rng.randint(lo, hi) for lo, hi in ranges)
                    if point not in evaluated:
                        evaluate(point)
                        break
                else:
                    break

    feasible = [t for t in trials if t.feasible]
    if not feasible:
        raise TuningError("every evaluated assignment raised; nothing to rank")
    best = min(feasible, key=lambda t: (t.seconds, t.assignment))
    return TunedAllocation(
        assignment=dict(zip(names, best.assignment)),
        objective=best.seconds,
        trials=tuple(trials),
        space=space,
        seed=seed,
    )


def aggregate_mode(allocations: Sequence[TunedAllocation]) -> dict[str, int]:
    """Modal full assignment across repeated tunings.

    Ties break by lowest mean objective among the tied assignments, then by
    lexicographically smallest assignment tuple.
    """
    if not allocations:
        raise TuningError("aggregate_mode needs at least one allocation")
    names = allocations[0].space.names
    for a in allocations:
        if a.space.names != names:
            raise ConfigError("allocations come from different spaces")
    counts: dict[tuple[int, ...], list[float]] = {}
    for a in allocations:
        counts.setdefault(a.assignment_tuple(), []).append(a.objective)
    best = min(
        counts.items(),
        key=lambda kv: (-len(kv[1]), sum(kv[1]) / len(kv[1]), kv[0]),
    )
    return dict(zip(names, best[0]))


def host_descriptor() -> dict:
    import os

    return {
        "node": platform.node(),
        "machine": platform.machine(),
        "system": platform.system(),
        "cpus": os.cpu_count(),
        "python": platform.python_version(),
    }


def save_tuning(path, result: TunedAllocation) -> None:
    doc = {
        "space": [list(d) for d in result.space.dims],
        "seed": result.seed,
        "winner": result.assignment,
        "objective": result.objective,
        "trials": [
            {
                "assignment": dict(zip(result.space.names, t.assignment)),
                "seconds": (t.seconds if math.isfinite(t.seconds) else None),
                "samples": list(t.samples),
                "feasible": t.feasible,
            }
            for t in result.trials
        ],
        "host": host_descriptor(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_tuning(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"tuning cache {path} is not valid JSON: {exc}") from exc
