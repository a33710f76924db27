"""Small canned programs shared by the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .context import ExecutionContext, ExecutionStats
from .index_space import ALPHA, BETA, IndexSpace, TiledIndexSpace
from .scheduler import Schedule, Scheduler
from .tensor import Tensor

__all__ = ["ExampleSpaces", "example_spaces", "OpsDemo", "build_ops_demo", "ops_demo_oracle", "chain_program", "spin_space", "run_demo"]


@dataclass
class ExampleSpaces:
    N: IndexSpace
    M: IndexSpace
    K: IndexSpace
    tN: TiledIndexSpace
    tM: TiledIndexSpace
    tK: TiledIndexSpace


def example_spaces() -> ExampleSpaces:
    """N=100 tiled by 10, M=30 tiled {10, 20}, K=20 tiled by 5 with halves
    named ``first`` and ``second``."""
    N = IndexSpace(100)
    M = IndexSpace(30)
    K = IndexSpace(20, named_subspaces={"first": [range(0, 10)], "second": [range(10, 20)]})
    return ExampleSpaces(N, M, K, TiledIndexSpace(N, 10), TiledIndexSpace(M, [10, 20]), TiledIndexSpace(K, 5))


@dataclass
class OpsDemo:
    ec: ExecutionContext
    scheduler: Scheduler
    A: Tensor
    B: Tensor
    C: Tensor
    program: list[str]


def build_ops_demo(nranks: int = 1, scheme: str = "rr-sparse", workers: int | None = None) -> OpsDemo:
    """Queue (but do not run) the set / transpose-add / contract program::

        A(i,l)  = 1.0
        B(l,i) += -1.0 * A(i,l)
        C(i,j)  = 0.5 * A(i,l) * B(l,j)

    with ``A`` on (M, K), ``B`` on (K, M) and ``C`` on (M, M). Every element
    of ``C`` ends up as ``0.5 * 20 * (1.0 * -1.0) = -10``.
    """
    sp = example_spaces()
    i, j = sp.tM.labels(2, "i j")
    (l,) = sp.tK.labels(1, "l")
    A = Tensor([sp.tM, sp.tK], name="A")
    B = Tensor([sp.tK, sp.tM], name="B")
    C = Tensor([sp.tM, sp.tM], name="C")
    ec = ExecutionContext(nranks, scheme, workers=workers)
    sch = Scheduler(ec)
    sch.allocate(A, B, C)
    sch(A(i, l).assign(1.0))
    sch(B(l, i).accumulate(-1.0 * A(i, l)))
    sch(C(i, j).assign(0.5 * A(i, l) * B(l, j)))
    return OpsDemo(ec, sch, A, B, C, [str(op) for op in sch.queue])


def ops_demo_oracle() -> np.ndarray:
    """Dense reference for :func:`build_ops_demo`, by explicit loops."""
    A = np.zeros((30, 20))
    for x in range(30):
        for y in range(20):
            A[x, y] = 1.0
    B = np.zeros((20, 30))
    for y in range(20):
        for x in range(30):
            B[y, x] += -1.0 * A[x, y]
    C = np.zeros((30, 30))
    for x in range(30):
        for z in range(30):
            C[x, z] = 0.5 * sum(A[x, y] * B[y, z] for y in range(20))
    return C


def chain_program(length: int = 125, width: int = 5, nranks: int = 1) -> tuple[Scheduler, list[Tensor]]:
    """A queue of ``length`` accumulates over ``width`` small vectors.

    Op ``q`` does ``T[q % width] += 0.5 * T[(q * 3 + 1) % width]``, which
    gives a mix of independent and chained ops.
    """
    sp = IndexSpace(4)
    t = TiledIndexSpace(sp, 2)
    (x,) = t.labels(1, "x")
    tensors = [Tensor([t], name=f"T{w}") for w in range(width)]
    sch = Scheduler(ExecutionContext(nranks))
    sch.allocate(*tensors)
    sch(*(tensors[w](x).assign(float(w + 1)) for w in range(width)))
    for q in range(length - width):
        dst, src = tensors[q % width], tensors[(q * 3 + 1) % width]
        if dst is src:
            sch(dst(x).accumulate(1.0))
        else:
            sch(dst(x).accumulate(0.5 * src(x)))
    return sch, tensors


def spin_space(extent: int) -> IndexSpace:
    """Index space whose first half is spin alpha and second half beta."""
    half = extent // 2
    return IndexSpace(extent, spin={range(0, half): ALPHA, range(half, extent): BETA})


def run_demo(demo: OpsDemo) -> tuple[Schedule, ExecutionStats]:
    stats = demo.scheduler.execute()
    return demo.scheduler.last_schedule, stats
