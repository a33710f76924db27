"""Index spaces, tilings and index labels.

An :class:`IndexSpace` is an ordered set of integer indices. It can carry
named subranges (``"occ"``, ``"virt"``, ...) and a per-index spin value.
A :class:`TiledIndexSpace` partitions an index space into contiguous tiles;
tensors built on tiled spaces store one dense block per tile tuple.

Named sub-tiled spaces (``tK("first")``) inherit the tile boundaries of the
parent restricted to the subrange, so a label on the subspace addresses
slices of the parent's blocks directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

__all__ = [
    "ALPHA",
    "BETA",
    "IndexSpace",
    "TiledIndexSpace",
    "TiledIndexLabel",
    "make_index_space",
    "subspace",
    "tile_fixed",
    "tile_custom",
    "labels",
    "is_sub_label_of",
]

ALPHA = +1
BETA = -1

Range = tuple[int, int]


def _as_range(r) -> Range:
    if isinstance(r, range):
        if r.step != 1:
            raise ValueError(f"subrange {r!r} must have unit step")
        return (r.start, r.stop)
    start, stop = r
    return (int(start), int(stop))


def _check_ranges(ranges: Sequence[Range], lo: int, hi: int, what: str) -> None:
    prev_stop = None
    for start, stop in ranges:
        if not (lo <= start < stop <= hi):
            raise ValueError(f"{what}: subrange [{start}, {stop}) outside [{lo}, {hi}) or empty")
        if prev_stop is not None and start < prev_stop:
            raise ValueError(f"{what}: subranges must be disjoint and ascending")
        prev_stop = stop


class IndexSpace:
    """An immutable, ordered range of indices.

    Parameters
    ----------
    extent
        Number of indices.
    named_subspaces
        Mapping ``name -> [subrange, ...]``. Subranges are ``range`` objects
        or ``(start, stop)`` pairs in absolute index coordinates; within one
        name they must be disjoint and ascending.
    spin
        Optional mapping ``subrange -> ALPHA | BETA`` (or a sequence of
        ``(subrange, spin)`` pairs). When given it must cover every index
        exactly once.
    offset
        First index value.
    """

    def __init__(
        self,
        extent: int,
        named_subspaces: Mapping[str, Iterable] | None = None,
        spin: Mapping | Sequence | None = None,
        offset: int = 0,
    ):
        extent = int(extent)
        if extent <= 0:
            raise ValueError(f"extent must be positive, got {extent}")
        self.extent = extent
        self.offset = int(offset)
        self.indices: tuple[int, ...] = tuple(range(self.offset, self.offset + extent))
        self.parent: IndexSpace | None = None
        self.name: str | None = None
        self._position = None
        lo, hi = self.offset, self.offset + extent

        self._named: dict[str, tuple[Range, ...]] = {}
        for name, ranges in (named_subspaces or {}).items():
            rs = tuple(_as_range(r) for r in ranges)
            if not rs:
                raise ValueError(f"subspace {name!r} has no subranges")
            _check_ranges(rs, lo, hi, f"subspace {name!r}")
            self._named[name] = rs

        self.spins: tuple[int, ...] | None = None
        if spin is not None:
            items = spin.items() if isinstance(spin, Mapping) else spin
            values: list[int | None] = [None] * extent
            for r, s in items:
                start, stop = _as_range(r)
                if s not in (ALPHA, BETA):
                    raise ValueError(f"spin must be ALPHA (+1) or BETA (-1), got {s!r}")
                _check_ranges([(start, stop)], lo, hi, "spin")
                for q in range(start - lo, stop - lo):
                    if values[q] is not None:
                        raise ValueError(f"index {q + lo} assigned spin twice")
                    values[q] = s
            if any(v is None for v in values):
                missing = [q + lo for q, v in enumerate(values) if v is None]
                raise ValueError(f"spin does not cover indices {missing[:5]}...")
            self.spins = tuple(values)  # type: ignore[arg-type]

        self._children: dict[str, IndexSpace] = {}

    @classmethod
    def _from_subranges(cls, parent: "IndexSpace", name: str, ranges: tuple[Range, ...]):
        sub = cls.__new__(cls)
        sub.parent = parent
        sub.name = name
        sub.indices = tuple(q for start, stop in ranges for q in range(start, stop))
        sub.extent = len(sub.indices)
        sub.offset = sub.indices[0]
        sub._named = {}
        sub._children = {}
        sub._position = None
        if parent.spins is None:
            sub.spins = None
        else:
            sub.spins = tuple(parent.spins[parent.position(q)] for q in sub.indices)
        sub._ranges_in_parent = tuple(
            (parent.position(start), parent.position(stop - 1) + 1) for start, stop in ranges
        )
        return sub

    @property
    def subspace_names(self) -> tuple[str, ...]:
        return tuple(self._named)

    def subranges(self, name: str) -> tuple[Range, ...]:
        try:
            return self._named[name]
        except KeyError:
            raise KeyError(f"unknown subspace {name!r}; known: {sorted(self._named)}") from None

    def subspace(self, name: str) -> "IndexSpace":
        if name not in self._children:
            self._children[name] = IndexSpace._from_subranges(self, name, self.subranges(name))
        return self._children[name]

    __call__ = subspace

    def position(self, index: int) -> int:
        """Local position of an absolute index value."""
        if self._position is None:
            self._position = {q: p for p, q in enumerate(self.indices)}
        try:
            return self._position[index]
        except KeyError:
            raise IndexError(f"index {index} not in this space") from None

    def spin_at(self, position: int) -> int | None:
        return None if self.spins is None else self.spins[position]

    def root(self) -> "IndexSpace":
        s = self
        while s.parent is not None:
            s = s.parent
        return s

    def __len__(self) -> int:
        return self.extent

    def __repr__(self) -> str:
        if self.parent is not None:
            return f"IndexSpace({self.parent!r}({self.name!r}), extent={self.extent})"
        return f"IndexSpace(extent={self.extent})"


def make_index_space(extent: int, named_subspaces=None, spin=None, offset: int = 0) -> IndexSpace:
    return IndexSpace(extent, named_subspaces, spin, offset)


def subspace(space: IndexSpace, name: str) -> IndexSpace:
    return space.subspace(name)


_label_ids = itertools.count()


class TiledIndexSpace:
    """A partition of an :class:`IndexSpace` into contiguous, non-empty tiles.

    ``tiles`` is either a single tile size (fixed tiling, the last tile holds
    the remainder) or a list of tile sizes that must sum to the extent.
    """

    def __init__(self, index_space: IndexSpace, tiles: int | Sequence[int]):
        n = index_space.extent
        if isinstance(tiles, int):
            if tiles < 1:
                raise ValueError(f"tile size must be >= 1, got {tiles}")
            sizes = [tiles] * (n // tiles)
            if n % tiles:
                sizes.append(n % tiles)
        else:
            sizes = [int(s) for s in tiles]
            if any(s < 1 for s in sizes):
                raise ValueError(f"tile sizes must be >= 1, got {sizes}")
            if sum(sizes) != n:
                raise ValueError(f"tile sizes {sizes} sum to {sum(sizes)}, expected extent {n}")
        self._init(index_space, tuple(sizes))
        self.parent: TiledIndexSpace | None = None
        self.name: str | None = None
        self._parent_map: tuple[tuple[int, int], ...] = ()

    def _init(self, index_space: IndexSpace, sizes: tuple[int, ...]) -> None:
        self.index_space = index_space
        self.tile_sizes = sizes
        offsets = [0]
        for s in sizes:
            offsets.append(offsets[-1] + s)
        self.tile_offsets: tuple[int, ...] = tuple(offsets)
        self._children: dict[str, TiledIndexSpace] = {}
        self._locate_cache: dict = {}
        if index_space.spins is not None:
            for t in range(len(sizes)):
                start, stop = offsets[t], offsets[t + 1]
                if len(set(index_space.spins[start:stop])) != 1:
                    raise ValueError(f"tile {t} [{start}, {stop}) straddles a spin boundary")

    @property
    def extent(self) -> int:
        return self.index_space.extent

    @property
    def ntiles(self) -> int:
        return len(self.tile_sizes)

    def tile_range(self, t: int) -> Range:
        return (self.tile_offsets[t], self.tile_offsets[t + 1])

    def tile_size(self, t: int) -> int:
        return self.tile_sizes[t]

    def tile_spin(self, t: int) -> int | None:
        return self.index_space.spin_at(self.tile_offsets[t])

    def tile_of(self, position: int) -> int:
        """Tile ordinal holding local ``position``."""
        if not 0 <= position < self.extent:
            raise IndexError(position)
        lo, hi = 0, self.ntiles
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.tile_offsets[mid] <= position:
                lo = mid
            else:
                hi = mid
        return lo

    def subspace(self, name: str) -> "TiledIndexSpace":
        """Sub-tiled space over a named subrange; cached so identity is stable."""
        if name not in self._children:
            self._children[name] = self._derive(name)
        return self._children[name]

    __call__ = subspace

    def _derive(self, name: str) -> "TiledIndexSpace":
        sub_is = self.index_space.subspace(name)
        sizes, pmap = [], []
        for start, stop in sub_is._ranges_in_parent:
            for t in range(self.ntiles):
                lo, hi = self.tile_range(t)
                a, b = max(lo, start), min(hi, stop)
                if a < b:
                    sizes.append(b - a)
                    pmap.append((t, a - lo))
        child = TiledIndexSpace.__new__(TiledIndexSpace)
        child._init(sub_is, tuple(sizes))
        child.parent = self
        child.name = name
        child._parent_map = tuple(pmap)
        return child

    def is_derived_from(self, other: "TiledIndexSpace") -> bool:
        s: TiledIndexSpace | None = self
        while s is not None:
            if s is other:
                return True
            s = s.parent
        return False

    def locate(self, tile: int, ancestor: "TiledIndexSpace") -> tuple[int, int, int]:
        """Map ``tile`` of this space into ``ancestor``.

        Returns ``(ancestor_tile, start, stop)`` where ``start:stop`` is the
        slice inside the ancestor tile covered by ``tile``.
        """
        key = (tile, id(ancestor))
        hit = self._locate_cache.get(key)
        if hit is not None:
            return hit
        if ancestor is self:
            out = (tile, 0, self.tile_sizes[tile])
        elif self.parent is None:
            raise ValueError("space is not derived from the requested ancestor")
        else:
            ptile, off = self._parent_map[tile]
            at, s, _ = self.parent.locate(ptile, ancestor)
            out = (at, s + off, s + off + self.tile_sizes[tile])
        self._locate_cache[key] = out
        return out

    def labels(self, n: int, names: str | Sequence[str] | None = None) -> list["TiledIndexLabel"]:
        return labels(self, n, names)

    def __repr__(self) -> str:
        if self.parent is not None:
            return f"{self.parent!r}({self.name!r})"
        return f"TiledIndexSpace(extent={self.extent}, tiles={list(self.tile_sizes)})"


def tile_fixed(space: IndexSpace, tile_size: int) -> TiledIndexSpace:
    return TiledIndexSpace(space, int(tile_size))


def tile_custom(space: IndexSpace, sizes: Sequence[int]) -> TiledIndexSpace:
    return TiledIndexSpace(space, list(sizes))


@dataclass(frozen=True)
class TiledIndexLabel:
    """An Einstein-notation index bound to a tiled space.

    Equality is by space identity and ``label_id``; the name is cosmetic.
    """

    space: TiledIndexSpace
    label_id: int
    name: str = field(default="", compare=False)

    def __str__(self) -> str:
        return self.name or f"l{self.label_id}"

    def __repr__(self) -> str:
        return f"TiledIndexLabel({self!s}, {self.space!r})"


def labels(space: TiledIndexSpace, n: int, names: str | Sequence[str] | None = None) -> list[TiledIndexLabel]:
    if n < 1:
        raise ValueError("need at least one label")
    if isinstance(names, str):
        names = names.replace(",", " ").split()
    if names is not None and len(names) != n:
        raise ValueError(f"got {len(names)} names for {n} labels")
    out = []
    for q in range(n):
        lid = next(_label_ids)
        out.append(TiledIndexLabel(space, lid, names[q] if names else f"l{lid}"))
    return out


def is_sub_label_of(label: TiledIndexLabel, space: TiledIndexSpace) -> bool:
    return label.space.is_derived_from(space)
