"""Operation queue, levelized schedule and SPMD execution.

Ops are queued in program order. :func:`levelize` assigns each op the
earliest level after every earlier op it conflicts with; ops in one level
run together and a barrier separates levels. Allocations are hoisted into a
prelude that precedes level 1.

Execution is owner-computes: the rank owning an lhs block does all the work
for that block, fetching rhs blocks (remote fetches are counted). Within a
level all block tasks read first and write afterwards, so an op may read
the tensor it writes.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .context import ExecutionContext, ExecutionStats
from .ops import OpKind, TensorOp, allocate_op, conflicts, deallocate_op
from .tensor import BlockId, LabeledTensor, Tensor

__all__ = [
    "Schedule",
    "Scheduler",
    "block_contract",
    "block_add",
    "enqueue",
    "levelize",
    "execute",
    "dump_schedule",
]

SCHEMA_SCHEDULE = "tiletensor.schedule.v1"


def _perm(src: Sequence, dst: Sequence) -> list[int]:
    return [list(src).index(lab) for lab in dst]


def block_contract(out: np.ndarray, a: np.ndarray, b: np.ndarray, out_labels, a_labels, b_labels, alpha=1.0) -> int:
    """``out += alpha * contract(a, b)`` via permute, GEMM, permute back.

    Labels shared by ``a`` and ``b`` are summed. Returns the multiply-add
    count ``m * n * k``.
    """
    a_labels, b_labels, out_labels = list(a_labels), list(b_labels), list(out_labels)
    contr = [lab for lab in a_labels if lab in b_labels]
    free_a = [lab for lab in a_labels if lab not in b_labels]
    free_b = [lab for lab in b_labels if lab not in a_labels]
    if sorted(map(id, free_a + free_b)) != sorted(map(id, out_labels)):
        raise ValueError("output labels must be exactly the free labels of the operands")
    for lab in contr:
        if a.shape[a_labels.index(lab)] != b.shape[b_labels.index(lab)]:
            raise ValueError(f"extent mismatch on contracted label {lab}")
    ext = {lab: a.shape[q] for q, lab in enumerate(a_labels)}
    ext.update({lab: b.shape[q] for q, lab in enumerate(b_labels)})
    if out.shape != tuple(ext[lab] for lab in out_labels):
        raise ValueError(f"output block shape {out.shape} does not match operand extents")
    m = int(np.prod([ext[lab] for lab in free_a], dtype=np.int64))
    n = int(np.prod([ext[lab] for lab in free_b], dtype=np.int64))
    k = int(np.prod([ext[lab] for lab in contr], dtype=np.int64))
    if alpha == 0.0:
        return 0
    amat = a.transpose(_perm(a_labels, free_a + contr)).reshape(m, k)
    bmat = b.transpose(_perm(b_labels, contr + free_b)).reshape(k, n)
    c = (amat @ bmat).reshape([ext[lab] for lab in free_a + free_b])
    out += alpha * c.transpose(_perm(free_a + free_b, out_labels))
    return m * n * k


def block_add(out: np.ndarray, a: np.ndarray, out_labels, a_labels, alpha=1.0) -> int:
    """``out += alpha * permute(a)``; returns the element count."""
    permuted = a.transpose(_perm(list(a_labels), list(out_labels)))
    if permuted.shape != out.shape:
        raise ValueError(f"extent mismatch: {permuted.shape} vs {out.shape}")
    out += alpha * permuted
    return out.size


@dataclass
class Schedule:
    ops: list[TensorOp]
    prelude: list[TensorOp]
    levels: list[list[TensorOp]]
    level_of: list[int]
    edges: list[tuple[int, int]]

    @property
    def level_count(self) -> int:
        return len(self.levels)

    def to_json(self) -> dict:
        index = {id(op): q for q, op in enumerate(self.ops)}

        def op_doc(op):
            return dict(index=index[id(op)], **op.to_json())

        return {
            "schema": SCHEMA_SCHEDULE,
            "level_count": self.level_count,
            "prelude": [op_doc(op) for op in self.prelude],
            "levels": [{"level": lv + 1, "ops": [op_doc(op) for op in ops]} for lv, ops in enumerate(self.levels)],
            "edges": [list(e) for e in self.edges],
        }

    def to_text(self) -> str:
        if not self.ops:
            return ""
        index = {id(op): q for q, op in enumerate(self.ops)}
        lines = []
        for op in self.prelude:
            lines.append(f"prelude  [{index[id(op)]}] {op}")
        for lv, ops in enumerate(self.levels, start=1):
            lines.append(f"level {lv} ({len(ops)} op{'s' if len(ops) != 1 else ''})")
            for op in ops:
                reads = ",".join(sorted(t.name for t in op.reads))
                writes = ",".join(sorted(t.name for t in op.writes))
                lines.append(f"  [{index[id(op)]}] {op}    reads={{{reads}}} writes={{{writes}}}")
        lines.append("conflicts: " + (" ".join(f"{i}-{j}" for i, j in self.edges) or "none"))
        return "\n".join(lines)


def levelize(queue: Sequence[TensorOp]) -> Schedule:
    """Greedy earliest-level list scheduling."""
    ops = list(queue)
    prelude = [op for op in ops if op.kind is OpKind.ALLOCATE]
    level_of = [0] * len(ops)
    compute = [q for q, op in enumerate(ops) if op.kind is not OpKind.ALLOCATE]
    edges = []
    for pos, q in enumerate(compute):
        lvl = 1
        for p in compute[:pos]:
            if conflicts(ops[p], ops[q]):
                edges.append((p, q))
                lvl = max(lvl, level_of[p] + 1)
        level_of[q] = lvl
    nlev = max((level_of[q] for q in compute), default=0)
    levels: list[list[TensorOp]] = [[] for _ in range(nlev)]
    for q in compute:
        levels[level_of[q] - 1].append(ops[q])
    return Schedule(ops, prelude, levels, level_of, edges)


def _locate(lt: LabeledTensor, tile_of: dict) -> tuple[BlockId, tuple[slice, ...]]:
    bid, sl = [], []
    for lab, dim in zip(lt.labels, lt.tensor.dims):
        t, s, e = lab.space.locate(tile_of[lab], dim)
        bid.append(t)
        sl.append(slice(s, e))
    return tuple(bid), tuple(sl)


def _tile_tuples(labels) -> itertools.product:
    return itertools.product(*(range(lab.space.ntiles) for lab in labels))


@dataclass
class _Task:
    op: TensorOp
    block: BlockId
    rank: int
    items: list = field(default_factory=list)


@dataclass
class _Write:
    tensor: Tensor
    block: BlockId
    rank: int
    slices: tuple
    values: np.ndarray | float
    accumulate: bool


class Scheduler:
    """Queues ops against one :class:`ExecutionContext` and runs them.

    Calls chain::

        sch.allocate(A, B, C)(A(i, l).assign(1.0))(C(i, j).assign(A(i, l) * B(l, j))).execute()
    """

    def __init__(self, ec: ExecutionContext):
        self.ec = ec
        self._queue: list[TensorOp] = []
        self._pending_alloc: set[int] = set()
        self._pending_free: set[int] = set()
        self._freed: set[int] = set()
        self.last_schedule: Schedule | None = None

    @property
    def queue(self) -> list[TensorOp]:
        return list(self._queue)

    def _check_usable(self, t: Tensor) -> None:
        if t.id in self._pending_free or (t.id in self._freed and not self.ec.is_allocated(t)):
            raise RuntimeError(f"use of deallocated tensor {t.name}")
        if not (self.ec.is_allocated(t) or t.id in self._pending_alloc):
            raise RuntimeError(f"tensor {t.name} is not allocated and has no pending allocation")

    def enqueue(self, *ops: TensorOp) -> "Scheduler":
        for op in ops:
            if op.kind is OpKind.ALLOCATE:
                for t in op.tensors:
                    if self.ec.is_allocated(t) or t.id in self._pending_alloc:
                        raise RuntimeError(f"tensor {t.name} is already allocated")
                    if t.id in self._freed:
                        raise RuntimeError(f"use of deallocated tensor {t.name}")
                self._pending_alloc.update(t.id for t in op.tensors)
            else:
                for t in op.referenced():
                    self._check_usable(t)
                if op.kind is OpKind.DEALLOCATE:
                    self._pending_free.update(t.id for t in op.tensors)
            self._queue.append(op)
        return self

    __call__ = enqueue

    def allocate(self, *tensors: Tensor) -> "Scheduler":
        return self.enqueue(allocate_op(*tensors))

    def deallocate(self, *tensors: Tensor) -> "Scheduler":
        return self.enqueue(deallocate_op(*tensors))

    def levelize(self) -> Schedule:
        return levelize(self._queue)

    def dump(self, fmt: str = "text"):
        schedule = self.levelize() if self._queue or self.last_schedule is None else self.last_schedule
        return dump_schedule(schedule, fmt)

    def execute(self) -> ExecutionStats:
        """Run every queued op; returns the stats of this epoch."""
        ec = self.ec
        stats = ExecutionStats(ec.nranks)
        schedule = self.levelize()
        for op in schedule.prelude:
            for t in op.tensors:
                ec.allocate(t)
        for ops in schedule.levels:
            self._run_level(ops, stats)
            stats.levels += 1
            stats.global_syncs += 1
        ec.stats.levels += stats.levels
        ec.stats.global_syncs += stats.global_syncs
        ec.stats.multiply_adds += stats.multiply_adds
        ec.stats.skipped_tasks += stats.skipped_tasks
        for r, n in enumerate(stats.per_rank_task_counts):
            ec.stats.per_rank_task_counts[r] += n
        self._freed |= self._pending_free
        self._pending_alloc.clear()
        self._pending_free.clear()
        self._queue.clear()
        self.last_schedule = schedule
        return stats

    # task generation

    def _tasks(self, op: TensorOp, stats: ExecutionStats, writes: list) -> list[_Task]:
        if op.kind is OpKind.SCAN:
            return self._scan_tasks(op)
        ec = self.ec
        lhs = op.lhs
        t = lhs.tensor
        p = ec.placement(t)
        groups: dict[BlockId, list] = defaultdict(list)
        for tiles in _tile_tuples(lhs.labels):
            tile_of = dict(zip(lhs.labels, tiles))
            bid, sl = _locate(lhs, tile_of)
            groups[bid].append((tile_of, sl))
        tasks = []
        for bid, items in groups.items():
            if not t.is_nonzero(bid):
                stats.skipped_tasks += 1
                continue
            rank = p.owner[bid]
            if op.kind in (OpKind.ADD, OpKind.MULT):
                live = []
                for tile_of, sl in items:
                    pairs = self._pairs(op, tile_of)
                    if pairs:
                        live.append((sl, pairs))
                    elif not op.accumulate:
                        writes.append(_Write(t, bid, rank, sl, 0.0, False))
                if not live:
                    stats.skipped_tasks += 1
                    continue
                tasks.append(_Task(op, bid, rank, live))
            else:
                tasks.append(_Task(op, bid, rank, [(sl, tile_of) for tile_of, sl in items]))
        return tasks

    def _pairs(self, op: TensorOp, tile_of: dict) -> list:
        """Contributing rhs block combinations for one lhs tile tuple."""
        if op.kind is OpKind.ADD:
            (r,) = op.rhs
            b, s = _locate(r, tile_of)
            return [(b, s)] if r.tensor.is_nonzero(b) else []
        r1, r2 = op.rhs
        out = []
        for ctiles in _tile_tuples(op.contraction):
            full = dict(tile_of)
            full.update(zip(op.contraction, ctiles))
            b1, s1 = _locate(r1, full)
            b2, s2 = _locate(r2, full)
            if r1.tensor.is_nonzero(b1) and r2.tensor.is_nonzero(b2):
                out.append((b1, s1, b2, s2))
        return out

    def _scan_tasks(self, op: TensorOp) -> list[_Task]:
        (lt,) = op.rhs
        t = lt.tensor
        p = self.ec.placement(t)
        groups: dict[BlockId, list] = defaultdict(list)
        for tiles in _tile_tuples(lt.labels):
            bid, sl = _locate(lt, dict(zip(lt.labels, tiles)))
            groups[bid].append(sl)
        linear = {b: j for j, b in enumerate(t.block_ids())}
        tasks = []
        for bid, sls in groups.items():
            rank = p.owner.get(bid)
            if rank is None:
                rank = linear[bid] % self.ec.nranks
            tasks.append(_Task(op, bid, rank, sls))
        return tasks

    # execution

    def _run_task(self, task: _Task, stats: ExecutionStats):
        ec = self.ec
        op = task.op
        cache: dict = {}

        def fetch(t: Tensor, b: BlockId) -> np.ndarray:
            key = (t.id, b)
            if key not in cache:
                cache[key] = ec.fetch(t, b, task.rank, stats)
            return cache[key]

        madds = 0
        writes, partials = [], []
        kind = op.kind
        if kind is OpKind.SCAN:
            (lt,) = op.rhs
            for sl in task.items:
                partials.append(op.fn(fetch(lt.tensor, task.block)[sl]))
            return madds, writes, partials

        lhs = op.lhs
        t = lhs.tensor
        for entry in task.items:
            if kind is OpKind.SET:
                sl, _ = entry
                writes.append(_Write(t, task.block, task.rank, sl, op.alpha, op.accumulate))
            elif kind is OpKind.MAP:
                sl, tile_of = entry
                if op.rhs:
                    args = []
                    for r in op.rhs:
                        b, s = _locate(r, tile_of)
                        args.append(fetch(r.tensor, b)[s].transpose(_perm(r.labels, lhs.labels)))
                else:
                    args = [fetch(t, task.block)[sl]]
                value = np.asarray(op.fn(*args), dtype=float)
                writes.append(_Write(t, task.block, task.rank, sl, value, op.accumulate))
            else:
                sl, pairs = entry
                acc = np.zeros(tuple(s.stop - s.start for s in sl))
                if kind is OpKind.ADD:
                    ((b, s),) = pairs
                    madds += block_add(acc, fetch(op.rhs[0].tensor, b)[s], lhs.labels, op.rhs[0].labels, op.alpha)
                else:
                    r1, r2 = op.rhs
                    for b1, s1, b2, s2 in pairs:
                        madds += block_contract(
                            acc,
                            fetch(r1.tensor, b1)[s1],
                            fetch(r2.tensor, b2)[s2],
                            lhs.labels,
                            r1.labels,
                            r2.labels,
                            op.alpha,
                        )
                writes.append(_Write(t, task.block, task.rank, sl, acc, op.accumulate))
        return madds, writes, partials

    def _run_level(self, ops: list[TensorOp], stats: ExecutionStats) -> None:
        ec = self.ec
        writes: list[_Write] = []
        by_rank: list[list[_Task]] = [[] for _ in range(ec.nranks)]
        frees = []
        for op in ops:
            if op.kind is OpKind.DEALLOCATE:
                frees.extend(op.tensors)
                continue
            for task in self._tasks(op, stats, writes):
                by_rank[task.rank].append(task)

        def run_rank(tasks):
            return [self._run_task(task, stats) for task in tasks]

        if ec.workers > 1 and sum(map(bool, by_rank)) > 1:
            with ThreadPoolExecutor(max_workers=ec.workers) as pool:
                results = list(pool.map(run_rank, by_rank))
        else:
            results = [run_rank(tasks) for tasks in by_rank]

        scan_parts: dict[int, list] = defaultdict(list)
        scan_ops: dict[int, TensorOp] = {}
        for rank, (tasks, outs) in enumerate(zip(by_rank, results)):
            stats.per_rank_task_counts[rank] += len(tasks)
            rank_parts: dict[int, list] = defaultdict(list)
            for task, (madds, task_writes, partials) in zip(tasks, outs):
                stats.multiply_adds += madds
                writes.extend(task_writes)
                if task.op.kind is OpKind.SCAN:
                    rank_parts[id(task.op)].extend(partials)
                    scan_ops[id(task.op)] = task.op
            for key, parts in rank_parts.items():
                scan_parts[key].append(reduce(scan_ops[key].combine, parts))

        for w in writes:
            view = ec.store.view(w.rank, w.tensor, w.block)
            if w.accumulate:
                view[w.slices] += w.values
            else:
                view[w.slices] = w.values
        for key, op in scan_ops.items():
            op.result.value = reduce(op.combine, scan_parts[key], op.result.init)
        for t in frees:
            ec.deallocate(t)


def enqueue(sch: Scheduler, op: TensorOp) -> None:
    sch.enqueue(op)


def execute(sch: Scheduler) -> ExecutionStats:
    return sch.execute()


def dump_schedule(schedule: Schedule | Scheduler, fmt: str = "text"):
    """Text or JSON (``dict``) rendering of a schedule."""
    if isinstance(schedule, Scheduler):
        return schedule.dump(fmt)
    if fmt == "json":
        return schedule.to_json()
    if fmt == "text":
        return schedule.to_text()
    raise ValueError(f"unknown format {fmt!r}")
