"""Tensor operations and their validation.

Grammar of the canonical text form (one op per line)::

    tensor-op := labeled ("=" | "+=") rhs
    rhs       := alpha
               | alpha "*" labeled
               | alpha "*" labeled "*" labeled
    labeled   := NAME "(" [LABEL {"," LABEL}] ")"

``Scan``, ``Map``, ``Allocate`` and ``Deallocate`` have their own
non-grammar forms (``scan<fn>(A(i,l))``, ``B(i,l) = map<fn>(A(i,l))``,
``allocate(A,B)``).
"""

from __future__ import annotations

import enum
import operator
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .tensor import LabeledTensor, Tensor, Term

__all__ = [
    "OpKind",
    "TensorOp",
    "ScanResult",
    "OpGraph",
    "validate_set",
    "validate_add",
    "validate_mult",
    "scan_op",
    "map_op",
    "allocate_op",
    "deallocate_op",
    "from_expression",
    "read_write_sets",
    "conflicts",
    "build_op_graph",
    "parse_op",
]


class OpKind(str, enum.Enum):
    ALLOCATE = "Allocate"
    DEALLOCATE = "Deallocate"
    SET = "Set"
    ADD = "Add"
    MULT = "Mult"
    SCAN = "Scan"
    MAP = "Map"


class ScanResult:
    """Mutable holder for the value a Scan produces on execution."""

    def __init__(self, init):
        self.init = init
        self.value = None

    def __repr__(self) -> str:
        return f"ScanResult({self.value!r})"


@dataclass(frozen=True, eq=False)
class TensorOp:
    kind: OpKind
    lhs: LabeledTensor | None = None
    alpha: float = 1.0
    rhs: tuple[LabeledTensor, ...] = ()
    accumulate: bool = False
    fn: Callable | None = None
    combine: Callable | None = None
    tensors: tuple[Tensor, ...] = ()
    result: ScanResult | None = None
    contraction: tuple = field(default=())

    @property
    def reads(self) -> frozenset[Tensor]:
        return read_write_sets(self)[0]

    @property
    def writes(self) -> frozenset[Tensor]:
        return read_write_sets(self)[1]

    def referenced(self) -> tuple[Tensor, ...]:
        if self.kind in (OpKind.ALLOCATE, OpKind.DEALLOCATE):
            return self.tensors
        out = [lt.tensor for lt in self.rhs]
        if self.lhs is not None:
            out.insert(0, self.lhs.tensor)
        return tuple(out)

    def to_text(self) -> str:
        k = self.kind
        if k in (OpKind.ALLOCATE, OpKind.DEALLOCATE):
            return f"{k.value.lower()}({', '.join(t.name for t in self.tensors)})"
        fname = getattr(self.fn, "__name__", "fn")
        if k is OpKind.SCAN:
            return f"scan<{fname}>({self.rhs[0]})"
        assign = "+=" if self.accumulate else "="
        if k is OpKind.MAP:
            return f"{self.lhs} {assign} map<{fname}>({', '.join(map(str, self.rhs))})"
        parts = [repr(self.alpha)] + [str(lt) for lt in self.rhs]
        return f"{self.lhs} {assign} {' * '.join(parts)}"

    def to_json(self) -> dict:
        reads, writes = read_write_sets(self)
        doc: dict[str, Any] = {"kind": self.kind.value, "text": self.to_text()}
        if self.lhs is not None:
            doc["lhs"] = _lt_json(self.lhs)
        if self.rhs:
            doc["rhs"] = [_lt_json(lt) for lt in self.rhs]
        if self.kind in (OpKind.SET, OpKind.ADD, OpKind.MULT):
            doc["alpha"] = self.alpha
        if self.kind is OpKind.MULT:
            doc["contraction"] = [str(lab) for lab in self.contraction]
        doc["accumulate"] = self.accumulate
        doc["reads"] = sorted(t.name for t in reads)
        doc["writes"] = sorted(t.name for t in writes)
        return doc

    def __str__(self) -> str:
        return self.to_text()


def _lt_json(lt: LabeledTensor) -> dict:
    return {"tensor": lt.tensor.name, "labels": [str(lab) for lab in lt.labels]}


def _no_repeats(lt: LabeledTensor, role: str) -> None:
    dup = [lab for lab, n in Counter(lt.labels).items() if n > 1]
    if dup:
        raise ValueError(f"repeated label {dup[0]} in {role} {lt}")


def validate_set(lhs: LabeledTensor, alpha: float, accumulate: bool = False) -> TensorOp:
    _no_repeats(lhs, "lhs")
    return TensorOp(OpKind.SET, lhs, float(alpha), (), accumulate)


def validate_add(lhs: LabeledTensor, alpha: float, rhs: LabeledTensor, accumulate: bool = False) -> TensorOp:
    _no_repeats(lhs, "lhs")
    _no_repeats(rhs, "rhs")
    if set(lhs.labels) != set(rhs.labels):
        raise ValueError(f"add {lhs} <- {rhs}: labels must be a permutation of each other")
    return TensorOp(OpKind.ADD, lhs, float(alpha), (rhs,), accumulate)


def validate_mult(
    lhs: LabeledTensor, alpha: float, rhs1: LabeledTensor, rhs2: LabeledTensor, accumulate: bool = False
) -> TensorOp:
    _no_repeats(lhs, "lhs")
    _no_repeats(rhs1, "rhs")
    _no_repeats(rhs2, "rhs")
    out, a, b = set(lhs.labels), set(rhs1.labels), set(rhs2.labels)
    for lab in lhs.labels:
        if lab in a and lab in b:
            raise ValueError(f"label {lab} appears in lhs and both operands of {lhs} = {rhs1} * {rhs2}")
        if lab not in a and lab not in b:
            raise ValueError(f"lhs label {lab} missing from operands {rhs1}, {rhs2}")
    dangling = (a ^ b) - out
    if dangling:
        lab = sorted(dangling, key=lambda x: x.label_id)[0]
        raise ValueError(f"label {lab} appears in one operand only and not in lhs {lhs}")
    contraction = tuple(lab for lab in rhs1.labels if lab in b)
    return TensorOp(OpKind.MULT, lhs, float(alpha), (rhs1, rhs2), accumulate, contraction=contraction)


def scan_op(t: LabeledTensor, fn: Callable, combine: Callable = operator.add, init=0.0) -> TensorOp:
    """Reduce ``fn(block)`` over every block of the view with ``combine``."""
    _no_repeats(t, "scan")
    return TensorOp(OpKind.SCAN, None, 1.0, (t,), False, fn=fn, combine=combine, result=ScanResult(init))


def map_op(lhs: LabeledTensor, fn: Callable, *rhs: LabeledTensor, accumulate: bool = False) -> TensorOp:
    """``lhs = fn(*rhs)`` elementwise; without rhs, ``lhs = fn(lhs)``."""
    _no_repeats(lhs, "lhs")
    for r in rhs:
        _no_repeats(r, "rhs")
        if set(r.labels) != set(lhs.labels):
            raise ValueError(f"map {lhs} <- {r}: shape mismatch (labels must match lhs)")
    return TensorOp(OpKind.MAP, lhs, 1.0, tuple(rhs), accumulate, fn=fn)


def allocate_op(*tensors: Tensor) -> TensorOp:
    return TensorOp(OpKind.ALLOCATE, tensors=tuple(tensors))


def deallocate_op(*tensors: Tensor) -> TensorOp:
    return TensorOp(OpKind.DEALLOCATE, tensors=tuple(tensors))


def from_expression(lhs: LabeledTensor, rhs, accumulate: bool) -> TensorOp:
    """Classify ``lhs (=|+=) rhs`` into Set, Add or Mult."""
    if isinstance(rhs, LabeledTensor):
        rhs = Term(1.0, (rhs,))
    if isinstance(rhs, Term):
        if len(rhs.factors) == 0:
            return validate_set(lhs, rhs.alpha, accumulate)
        if len(rhs.factors) == 1:
            return validate_add(lhs, rhs.alpha, rhs.factors[0], accumulate)
        if len(rhs.factors) == 2:
            return validate_mult(lhs, rhs.alpha, *rhs.factors, accumulate)
        raise ValueError("contractions of more than two operands must be factored into binary ops")
    return validate_set(lhs, float(rhs), accumulate)


def read_write_sets(op: TensorOp) -> tuple[frozenset, frozenset]:
    k = op.kind
    if k is OpKind.ALLOCATE or k is OpKind.DEALLOCATE:
        return frozenset(), frozenset(op.tensors)
    reads = {lt.tensor for lt in op.rhs}
    writes = set()
    if op.lhs is not None:
        writes.add(op.lhs.tensor)
        if op.accumulate or (k is OpKind.MAP and not op.rhs):
            reads.add(op.lhs.tensor)
    return frozenset(reads), frozenset(writes)


def conflicts(a: TensorOp, b: TensorOp) -> bool:
    if a is b:
        return False
    ra, wa = read_write_sets(a)
    rb, wb = read_write_sets(b)
    return bool(wa & (rb | wb)) or bool(wb & ra)


@dataclass
class OpGraph:
    ops: list[TensorOp]
    edges: list[tuple[int, int]]


def build_op_graph(ops: Sequence[TensorOp]) -> OpGraph:
    ops = list(ops)
    edges = [(i, j) for j in range(len(ops)) for i in range(j) if conflicts(ops[i], ops[j])]
    return OpGraph(ops, edges)


_LABELED = r"([A-Za-z_][\w.]*)\(([^()]*)\)"
_NUMBER = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|inf|nan)"
_OP_RE = re.compile(
    rf"^\s*{_LABELED}\s*(\+?=)\s*({_NUMBER})((?:\s*\*\s*{_LABELED}){{0,2}})\s*$"
)
_FACTOR_RE = re.compile(rf"\*\s*{_LABELED}")


def parse_op(text: str) -> dict:
    """Parse the canonical grammar form into a plain structure.

    Returns ``{"lhs": (name, labels), "accumulate": bool, "alpha": float,
    "rhs": [(name, labels), ...]}``; raises ``ValueError`` on text that does
    not conform.
    """
    m = _OP_RE.match(text)
    if not m:
        raise ValueError(f"not a tensor-op: {text!r}")

    def split(s):
        s = s.strip()
        return tuple(x.strip() for x in s.split(",")) if s else ()

    rhs = [(name, split(labs)) for name, labs in _FACTOR_RE.findall(m.group(5))]
    return {
        "lhs": (m.group(1), split(m.group(2))),
        "accumulate": m.group(3) == "+=",
        "alpha": float(m.group(4)),
        "rhs": rhs,
    }
