"""Block-to-rank placement.

Three schemes are provided:

``grid``
    Factor the rank count into an effective processor grid with one factor
    per tensor dimension and map block ``(b1, ..., bk)`` cyclically onto it.
    Every grid block is allocated at its true volume.
``rr-dense``
    Round-robin over all grid blocks in row-major order with equal-sized
    slots as large as the largest block. Ignores sparsity.
``rr-sparse``
    Round-robin over nonzero blocks only, each allocated at its true volume.

New schemes subclass :class:`Distribution` and register in ``SCHEMES``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .tensor import BlockId, Tensor

__all__ = [
    "ProcessGroup",
    "Placement",
    "MemoryReport",
    "Distribution",
    "GridDistribution",
    "RoundRobinDense",
    "RoundRobinSparse",
    "SCHEMES",
    "get_distribution",
    "effective_grid",
    "place_grid",
    "place_round_robin_dense",
    "place_round_robin_sparse",
    "memory_footprint",
]


@dataclass(frozen=True)
class ProcessGroup:
    nranks: int

    def __post_init__(self):
        if self.nranks < 1:
            raise ValueError(f"nranks must be >= 1, got {self.nranks}")

    @property
    def rank_ids(self) -> range:
        return range(self.nranks)


@dataclass(frozen=True)
class Placement:
    """Owner and storage of each allocated block of one tensor."""

    scheme: str
    nranks: int
    owner: dict[BlockId, int]
    slot: dict[BlockId, int]
    allocation: dict[BlockId, int]
    slot_size: int | None = None
    grid: tuple[int, ...] | None = None

    def blocks_of(self, rank: int) -> list[BlockId]:
        return [b for b, r in self.owner.items() if r == rank]

    def block_loads(self) -> list[int]:
        loads = [0] * self.nranks
        for r in self.owner.values():
            loads[r] += 1
        return loads


@dataclass(frozen=True)
class MemoryReport:
    scheme: str
    per_rank_blocks: list[int]
    per_rank_elements: list[int]
    total_elements: int
    nonzero_elements: int
    overallocation_ratio: float

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "per_rank_blocks": self.per_rank_blocks,
            "per_rank_elements": self.per_rank_elements,
            "total_elements": self.total_elements,
            "nonzero_elements": self.nonzero_elements,
            "overallocation_ratio": self.overallocation_ratio,
        }


def effective_grid(nranks: int, order: int) -> tuple[int, ...]:
    """Most balanced factorization of ``nranks`` into ``order`` factors.

    Minimizes max/min over factors; ties go to the lexicographically smallest
    descending tuple.
    """
    if nranks < 1:
        raise ValueError("nranks must be >= 1")
    if order < 1:
        raise ValueError("order must be >= 1")

    def factorizations(n: int, k: int, cap: int):
        if k == 1:
            if n <= cap:
                yield (n,)
            return
        for f in range(min(n, cap), 0, -1):
            if n % f == 0:
                for rest in factorizations(n // f, k - 1, f):
                    yield (f,) + rest

    best = min(factorizations(nranks, order, nranks), key=lambda fs: (fs[0] / fs[-1], fs))
    return best


def _volume(t: Tensor, b: BlockId) -> int:
    return math.prod(t.block_extents(b))


class Distribution:
    """Placement policy. Subclasses implement :meth:`place`."""

    name = "abstract"

    def place(self, t: Tensor, pg: ProcessGroup) -> Placement:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class GridDistribution(Distribution):
    name = "grid"

    def place(self, t, pg):
        if t.order == 0:
            return Placement(self.name, pg.nranks, {(): 0}, {(): 0}, {(): 1}, grid=())
        grid = effective_grid(pg.nranks, t.order)
        owner, slot, alloc = {}, {}, {}
        counts = [0] * pg.nranks
        for b in t.block_ids():
            coords = [x % g for x, g in zip(b, grid)]
            r = 0
            for c, g in zip(coords, grid):
                r = r * g + c
            owner[b] = r
            slot[b] = counts[r]
            counts[r] += 1
            alloc[b] = _volume(t, b)
        return Placement(self.name, pg.nranks, owner, slot, alloc, grid=grid)


class RoundRobinDense(Distribution):
    name = "rr-dense"

    def place(self, t, pg):
        slot_size = max(_volume(t, b) for b in t.block_ids())
        owner, slot, alloc = {}, {}, {}
        for j, b in enumerate(t.block_ids()):
            owner[b] = j % pg.nranks
            slot[b] = j // pg.nranks
            alloc[b] = slot_size
        return Placement(self.name, pg.nranks, owner, slot, alloc, slot_size=slot_size)


class RoundRobinSparse(Distribution):
    name = "rr-sparse"

    def place(self, t, pg):
        owner, slot, alloc = {}, {}, {}
        for k, b in enumerate(t.nonzero_blocks()):
            owner[b] = k % pg.nranks
            slot[b] = k // pg.nranks
            alloc[b] = _volume(t, b)
        return Placement(self.name, pg.nranks, owner, slot, alloc)


SCHEMES: dict[str, type[Distribution]] = {
    GridDistribution.name: GridDistribution,
    RoundRobinDense.name: RoundRobinDense,
    RoundRobinSparse.name: RoundRobinSparse,
}


def get_distribution(scheme: str | Distribution) -> Distribution:
    if isinstance(scheme, Distribution):
        return scheme
    try:
        return SCHEMES[scheme]()
    except KeyError:
        raise ValueError(f"unknown distribution scheme {scheme!r}; choose from {sorted(SCHEMES)}") from None


def place_grid(t: Tensor, pg: ProcessGroup) -> Placement:
    return GridDistribution().place(t, pg)


def place_round_robin_dense(t: Tensor, pg: ProcessGroup) -> Placement:
    return RoundRobinDense().place(t, pg)


def place_round_robin_sparse(t: Tensor, pg: ProcessGroup) -> Placement:
    return RoundRobinSparse().place(t, pg)


def memory_footprint(p: Placement, t: Tensor) -> MemoryReport:
    per_rank = [0] * p.nranks
    for b, r in p.owner.items():
        per_rank[r] += p.allocation[b]
    total = sum(per_rank)
    nonzero = sum(_volume(t, b) for b in t.nonzero_blocks())
    ratio = total / nonzero if nonzero else math.inf
    return MemoryReport(p.scheme, p.block_loads(), per_rank, total, nonzero, ratio)
