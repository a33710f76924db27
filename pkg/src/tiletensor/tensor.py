"""Tensor handles, block addressing and labeled views.

A :class:`Tensor` is a handle. It owns no data; the data lives in the
block store of the :class:`~tiletensor.context.ExecutionContext` that
allocated it. Copying a handle yields the same handle, so every copy sees
the same data.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterator, Sequence

import numpy as np

from .index_space import TiledIndexLabel, TiledIndexSpace, is_sub_label_of

if TYPE_CHECKING:
    from .ops import TensorOp

__all__ = [
    "BlockId",
    "DenseBlock",
    "Tensor",
    "LabeledTensor",
    "Term",
    "make_tensor",
    "label_tensor",
    "is_nonzero",
    "block_extents",
    "spin_conservation",
    "get_block",
    "put_block",
    "accumulate_block",
    "read_dense",
    "write_dense",
    "dump_tensor",
]

BlockId = tuple[int, ...]
Predicate = Callable[[BlockId], bool]

_tensor_ids = itertools.count()


@dataclass
class DenseBlock:
    """One tile tuple's worth of row-major contiguous data."""

    block_id: BlockId
    extents: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != tuple(self.extents):
            raise ValueError(f"data shape {self.data.shape} does not match extents {self.extents}")


def spin_conservation(dims: Sequence[TiledIndexSpace]) -> Predicate:
    """Nonzero-block predicate: spin of the first half of the dims equals
    spin of the second half.

    Dims without spin information contribute zero.
    """
    dims = tuple(dims)
    half = len(dims) // 2

    def predicate(block: BlockId) -> bool:
        spins = [d.tile_spin(t) or 0 for d, t in zip(dims, block)]
        return sum(spins[:half]) == sum(spins[half:])

    return predicate


class Tensor:
    """Handle for a blocked tensor over a list of tiled index spaces."""

    __slots__ = ("id", "name", "dims", "predicate", "_context", "_nonzero")

    def __init__(
        self,
        dims: Sequence[TiledIndexSpace],
        predicate: Predicate | str | None = None,
        name: str | None = None,
    ):
        self.id = next(_tensor_ids)
        self.dims: tuple[TiledIndexSpace, ...] = tuple(dims)
        if predicate == "spin":
            predicate = spin_conservation(self.dims)
        self.predicate: Predicate | None = predicate
        self.name = name or f"T{self.id}"
        self._context = None
        self._nonzero: dict[BlockId, bool] = {}

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(d.extent for d in self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def grid(self) -> tuple[int, ...]:
        return tuple(d.ntiles for d in self.dims)

    @property
    def nblocks(self) -> int:
        return math.prod(self.grid)

    @property
    def allocated(self) -> bool:
        return self._context is not None

    def block_ids(self) -> Iterator[BlockId]:
        """All grid blocks in row-major order."""
        return itertools.product(*(range(n) for n in self.grid))

    def nonzero_blocks(self) -> list[BlockId]:
        return [b for b in self.block_ids() if self.is_nonzero(b)]

    def check_block(self, block: BlockId) -> BlockId:
        block = tuple(int(x) for x in block)
        if len(block) != self.order or any(not 0 <= x < n for x, n in zip(block, self.grid)):
            raise IndexError(f"block {block} outside grid {self.grid} of {self.name}")
        return block

    def is_nonzero(self, block: BlockId) -> bool:
        hit = self._nonzero.get(block)
        if hit is None:
            block = self.check_block(block)
            hit = True if self.predicate is None else bool(self.predicate(block))
            self._nonzero[block] = hit
        return hit

    def block_extents(self, block: BlockId) -> tuple[int, ...]:
        block = self.check_block(block)
        return tuple(d.tile_size(t) for d, t in zip(self.dims, block))

    def block_slices(self, block: BlockId) -> tuple[slice, ...]:
        """Slices of the block inside the dense global array."""
        return tuple(slice(*d.tile_range(t)) for d, t in zip(self.dims, block))

    def __call__(self, *labels: TiledIndexLabel) -> "LabeledTensor":
        return LabeledTensor(self, labels)

    def __repr__(self) -> str:
        return f"Tensor({self.name}, shape={self.shape}, grid={self.grid})"


class LabeledTensor:
    """A tensor viewed through index labels, e.g. ``A(i, l)``."""

    __slots__ = ("tensor", "labels")

    def __init__(self, tensor: Tensor, labels: Sequence[TiledIndexLabel]):
        labels = tuple(labels)
        if len(labels) != tensor.order:
            raise ValueError(f"{tensor.name} has order {tensor.order}, got {len(labels)} labels")
        for pos, (lab, dim) in enumerate(zip(labels, tensor.dims)):
            if not isinstance(lab, TiledIndexLabel):
                raise TypeError(f"expected TiledIndexLabel, got {lab!r}")
            if not is_sub_label_of(lab, dim):
                raise ValueError(
                    f"label {lab} on {lab.space!r} is not compatible with dim {pos} ({dim!r}) of {tensor.name}"
                )
        self.tensor = tensor
        self.labels = labels

    def slice_extents(self) -> tuple[int, ...]:
        return tuple(lab.space.extent for lab in self.labels)

    def __str__(self) -> str:
        return f"{self.tensor.name}({','.join(str(lab) for lab in self.labels)})"

    __repr__ = __str__

    # expression building
    def __mul__(self, other):
        return Term(1.0, (self,)) * other

    def __rmul__(self, other):
        return Term(1.0, (self,)).__rmul__(other)

    def __neg__(self):
        return Term(-1.0, (self,))

    # op construction, see tiletensor.ops
    def assign(self, rhs) -> TensorOp:
        from .ops import from_expression

        return from_expression(self, rhs, accumulate=False)

    def accumulate(self, rhs) -> TensorOp:
        from .ops import from_expression

        return from_expression(self, rhs, accumulate=True)


class Term:
    """``alpha * X * Y ...`` on the right-hand side of an operation."""

    __slots__ = ("alpha", "factors")

    def __init__(self, alpha: float, factors: Sequence[LabeledTensor] = ()):
        self.alpha = float(alpha)
        self.factors = tuple(factors)

    def __mul__(self, other):
        if isinstance(other, LabeledTensor):
            return Term(self.alpha, self.factors + (other,))
        if isinstance(other, Term):
            return Term(self.alpha * other.alpha, self.factors + other.factors)
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Term(self.alpha * float(other), self.factors)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Term(float(other) * self.alpha, self.factors)
        return NotImplemented

    def __neg__(self):
        return Term(-self.alpha, self.factors)


def make_tensor(dims: Sequence[TiledIndexSpace], predicate=None, name: str | None = None) -> Tensor:
    return Tensor(dims, predicate, name)


def label_tensor(t: Tensor, labels: Sequence[TiledIndexLabel]) -> LabeledTensor:
    return LabeledTensor(t, labels)


def is_nonzero(t: Tensor, block: BlockId) -> bool:
    return t.is_nonzero(tuple(block))


def block_extents(t: Tensor, block: BlockId) -> tuple[int, ...]:
    return t.block_extents(block)


def get_block(ec, t: Tensor, block: BlockId, rank: int | None = None) -> DenseBlock:
    """Copy of one block. Zero blocks read as zeros.

    ``rank`` is the calling rank; a read from a block owned by another rank
    counts as a remote get. ``None`` means an unaccounted driver access.
    """
    block = t.check_block(block)
    data = ec.fetch(t, block, rank)
    return DenseBlock(block, t.block_extents(block), data)


def put_block(ec, t: Tensor, block: BlockId, values, rank: int | None = None) -> None:
    block = t.check_block(block)
    data = values.data if isinstance(values, DenseBlock) else np.asarray(values, dtype=float)
    ec.store_block(t, block, data, rank, accumulate=False)


def accumulate_block(ec, t: Tensor, block: BlockId, values, rank: int | None = None) -> None:
    block = t.check_block(block)
    data = values.data if isinstance(values, DenseBlock) else np.asarray(values, dtype=float)
    ec.store_block(t, block, data, rank, accumulate=True)


def read_dense(ec, t: Tensor) -> np.ndarray:
    """Gather a tensor into one dense array (driver access, not accounted)."""
    out = np.zeros(t.shape)
    for b in t.nonzero_blocks():
        out[t.block_slices(b)] = ec.fetch(t, b, None)
    return out


def write_dense(ec, t: Tensor, array) -> None:
    """Scatter a dense array into the tensor's nonzero blocks.

    Values falling into predicate-zero blocks must be zero.
    """
    array = np.asarray(array, dtype=float)
    if array.shape != t.shape:
        raise ValueError(f"array shape {array.shape} does not match {t.name} shape {t.shape}")
    for b in t.block_ids():
        part = array[t.block_slices(b)]
        if t.is_nonzero(b):
            ec.store_block(t, b, part, None, accumulate=False)
        elif np.any(part):
            raise ValueError(f"nonzero values in predicate-zero block {b} of {t.name}")


def dump_tensor(ec, t: Tensor, path=None) -> dict:
    """Debug dump: dims, tiling, nonzero block list and per-block values."""
    doc = {
        "name": t.name,
        "shape": list(t.shape),
        "dims": [{"extent": d.extent, "tiles": list(d.tile_sizes)} for d in t.dims],
        "nonzero_blocks": [list(b) for b in t.nonzero_blocks()],
        "blocks": {
            ",".join(map(str, b)): ec.fetch(t, b, None).ravel().tolist() for b in t.nonzero_blocks()
        },
    }
    if path is not None:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
    return doc
