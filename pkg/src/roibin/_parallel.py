"""Work slicing across a thread pool for kernels that release the GIL."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable


def run_sliced(
    worker: Callable[[int, int], None],
    n_items: int,
    threads: int,
    min_per_thread: int = 1,
) -> None:
    """Run ``worker(lo, hi)`` over a partition of ``[0, n_items)``.

    Slices are contiguous and disjoint, so results are identical to a single
    ``worker(0, n_items)`` call regardless of thread count.
    """
    if n_items <= 0:
        return
    t = min(max(1, threads), max(1, n_items // max(1, min_per_thread)))
    if t <= 1:
        worker(0, n_items)
        return
    step = -(-n_items // t)
    bounds = [(lo, min(lo + step, n_items)) for lo in range(0, n_items, step)]
    with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
        futures = [pool.submit(worker, lo, hi) for lo, hi in bounds]
        for f in futures:
            f.result()
