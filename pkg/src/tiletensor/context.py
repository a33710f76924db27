"""Execution context: simulated process group, distribution and block store."""

from __future__ import annotations

import math
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .distribution import Distribution, Placement, ProcessGroup, get_distribution, memory_footprint
from .tensor import BlockId, Tensor

__all__ = ["ExecutionStats", "BlockStore", "ExecutionContext", "default_workers"]


@dataclass
class ExecutionStats:
    """Counters for one execution epoch (or cumulative, on the context).

    ``multiply_adds`` counts one per ``c += a * b`` update; ``flops`` is
    twice that.
    """

    nranks: int = 1
    levels: int = 0
    global_syncs: int = 0
    remote_gets: int = 0
    remote_puts: int = 0
    remote_accumulates: int = 0
    multiply_adds: int = 0
    skipped_tasks: int = 0
    per_rank_task_counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.per_rank_task_counts:
            self.per_rank_task_counts = [0] * self.nranks

    @property
    def flops(self) -> int:
        return 2 * self.multiply_adds

    @property
    def total_tasks(self) -> int:
        return sum(self.per_rank_task_counts)

    def merge(self, other: "ExecutionStats") -> None:
        self.levels += other.levels
        self.global_syncs += other.global_syncs
        self.remote_gets += other.remote_gets
        self.remote_puts += other.remote_puts
        self.remote_accumulates += other.remote_accumulates
        self.multiply_adds += other.multiply_adds
        self.skipped_tasks += other.skipped_tasks
        for r, n in enumerate(other.per_rank_task_counts):
            self.per_rank_task_counts[r] += n

    def to_dict(self) -> dict:
        return {
            "nranks": self.nranks,
            "levels": self.levels,
            "global_syncs": self.global_syncs,
            "remote_gets": self.remote_gets,
            "remote_puts": self.remote_puts,
            "remote_accumulates": self.remote_accumulates,
            "multiply_adds": self.multiply_adds,
            "flops": self.flops,
            "skipped_tasks": self.skipped_tasks,
            "per_rank_task_counts": list(self.per_rank_task_counts),
        }


class BlockStore:
    """Per-rank block buffers. Slots are flat buffers sized by the placement,
    so over-allocating schemes really over-allocate."""

    def __init__(self, nranks: int):
        self._local: list[dict[tuple[int, BlockId], np.ndarray]] = [{} for _ in range(nranks)]
        self._lock = threading.Lock()

    def allocate(self, t: Tensor, p: Placement) -> None:
        for b, r in p.owner.items():
            self._local[r][(t.id, b)] = np.zeros(p.allocation[b])

    def free(self, t: Tensor, p: Placement) -> None:
        for b, r in p.owner.items():
            self._local[r].pop((t.id, b), None)

    def view(self, rank: int, t: Tensor, b: BlockId) -> np.ndarray:
        ext = t.block_extents(b)
        buf = self._local[rank][(t.id, b)]
        return buf[: math.prod(ext)].reshape(ext)

    def write(self, rank: int, t: Tensor, b: BlockId, values: np.ndarray, accumulate: bool) -> None:
        dst = self.view(rank, t, b)
        if accumulate:
            with self._lock:
                dst += values
        else:
            dst[...] = values

    def allocated_elements(self, rank: int) -> int:
        return sum(buf.size for buf in self._local[rank].values())


def default_workers(nranks: int) -> int:
    cap = os.environ.get("TILETENSOR_WORKERS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(nranks, limit))


class ExecutionContext:
    """Process group + distribution + memory manager.

    Parameters
    ----------
    pg
        A :class:`ProcessGroup` or a rank count.
    distribution
        Scheme name (``"grid"``, ``"rr-dense"``, ``"rr-sparse"``) or a
        :class:`Distribution` instance.
    workers
        In-process worker threads used within a level. Defaults to the rank
        count capped by ``TILETENSOR_WORKERS``.
    """

    def __init__(self, pg: ProcessGroup | int = 1, distribution: str | Distribution = "rr-sparse", workers=None):
        self.pg = pg if isinstance(pg, ProcessGroup) else ProcessGroup(int(pg))
        self.distribution = get_distribution(distribution)
        self.store = BlockStore(self.pg.nranks)
        self.placements: dict[int, Placement] = {}
        self.stats = ExecutionStats(self.pg.nranks)
        self.workers = workers if workers is not None else default_workers(self.pg.nranks)
        self._counter_lock = threading.Lock()

    @property
    def nranks(self) -> int:
        return self.pg.nranks

    def is_allocated(self, t: Tensor) -> bool:
        return t.id in self.placements

    def allocate(self, t: Tensor) -> Placement:
        if t.id in self.placements:
            raise RuntimeError(f"{t.name} is already allocated")
        if t._context is not None and t._context is not self:
            raise RuntimeError(f"{t.name} is allocated in another execution context")
        p = self.distribution.place(t, self.pg)
        self.store.allocate(t, p)
        self.placements[t.id] = p
        t._context = self
        return p

    def deallocate(self, t: Tensor) -> None:
        p = self.placement(t)
        self.store.free(t, p)
        del self.placements[t.id]
        t._context = None

    def placement(self, t: Tensor) -> Placement:
        try:
            return self.placements[t.id]
        except KeyError:
            raise RuntimeError(f"tensor {t.name} is not allocated") from None

    def owner(self, t: Tensor, b: BlockId) -> int | None:
        return self.placement(t).owner.get(b)

    def memory_report(self, t: Tensor):
        return memory_footprint(self.placement(t), t)

    def _count(self, attr: str, stats: ExecutionStats | None) -> None:
        with self._counter_lock:
            setattr(self.stats, attr, getattr(self.stats, attr) + 1)
        if stats is not None:
            setattr(stats, attr, getattr(stats, attr) + 1)

    def fetch(self, t: Tensor, b: BlockId, rank: int | None, stats: ExecutionStats | None = None) -> np.ndarray:
        """Copy of block ``b``; zeros for predicate-zero blocks."""
        p = self.placement(t)
        if not t.is_nonzero(b):
            return np.zeros(t.block_extents(b))
        owner = p.owner[b]
        if rank is not None and rank != owner:
            self._count("remote_gets", stats)
        return self.store.view(owner, t, b).copy()

    def store_block(self, t: Tensor, b: BlockId, values, rank: int | None, accumulate: bool, stats=None) -> None:
        p = self.placement(t)
        if not t.is_nonzero(b):
            raise ValueError(f"block {b} of {t.name} is predicate-zero and not writable")
        ext = t.block_extents(b)
        values = np.asarray(values, dtype=float)
        if values.shape != ext:
            raise ValueError(f"extent mismatch: block {b} of {t.name} has extents {ext}, got {values.shape}")
        owner = p.owner[b]
        if rank is not None and rank != owner:
            self._count("remote_accumulates" if accumulate else "remote_puts", stats)
        self.store.write(owner, t, b, values, accumulate)
