"""Acceptance suite. Each test is tagged with the criterion it backs; the
terminal summary prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import itertools
import math
import time

import numpy as np
import pytest

import cc_oracle
from oracle import interpret, nonzero_mask
from programs import max_rel_error, random_program, run_program, scans_close
from tiletensor import (
    ExecutionContext,
    IndexSpace,
    OpKind,
    ProcessGroup,
    Scheduler,
    Tensor,
    TiledIndexSpace,
    conflicts,
    effective_grid,
    levelize,
    memory_footprint,
    place_round_robin_dense,
    place_round_robin_sparse,
    read_dense,
    write_dense,
)
from tiletensor.cc import (
    assemble_VT1,
    assemble_VT2,
    build_intermediate,
    cholesky_decompose,
    energy_T,
    energy_T_parts,
    factorized_cost,
    naive_cost,
    reconstruct_v,
    run_cc_demo,
    synth_cc_inputs,
    term_factorized,
    term_naive,
)
from tiletensor.demos import build_ops_demo, spin_space

RANKS = (1, 2, 3, 8)


def longest_chain(ops) -> int:
    """Longest chain q1 < q2 < ... with consecutive ops conflicting, by
    enumerating every subsequence."""
    ops = [op for op in ops if op.kind is not OpKind.ALLOCATE]
    best = 0
    for r in range(1, len(ops) + 1):
        for sub in itertools.combinations(range(len(ops)), r):
            if all(conflicts(ops[p], ops[q]) for p, q in zip(sub, sub[1:])):
                best = r
                break
    return best


# 1. oracle equivalence


@pytest.mark.acceptance(1)
def test_oracle_equivalence_random_programs():
    start = time.perf_counter()
    kinds, custom, sliced, sparse = set(), False, False, False
    worst = 0.0
    for seed in range(200):
        prog = random_program(seed)
        assert sum(t.size for t in prog.tensors) <= 10**5
        ref, ref_scans = interpret(prog.ops, prog.init)
        res = run_program(prog, nranks=3, workers=2)
        err = max_rel_error(res.data, ref)
        worst = max(worst, err)
        assert err <= 1e-12, f"seed {seed}: relative error {err}"
        assert scans_close(res.scans, ref_scans), f"seed {seed}: scan {res.scans} vs {ref_scans}"
        for op in prog.ops:
            kinds.add(op.kind)
            for lt in ([op.lhs] if op.lhs is not None else []) + list(op.rhs):
                sliced |= any(lab.space is not dim for lab, dim in zip(lt.labels, lt.tensor.dims))
        for t in prog.tensors:
            custom |= any(len(set(d.tile_sizes)) > 1 for d in t.dims)
            sparse |= t.predicate is not None
    elapsed = time.perf_counter() - start
    assert kinds >= {OpKind.SET, OpKind.ADD, OpKind.MULT, OpKind.SCAN, OpKind.MAP}
    assert custom and sliced and sparse
    assert elapsed <= 60.0, f"took {elapsed:.1f}s"


# 2. rank invariance


@pytest.mark.acceptance(2)
@pytest.mark.parametrize("scheme", ["grid", "rr-dense", "rr-sparse"])
def test_rank_invariance_ops_demo(scheme):
    results = []
    for nranks in RANKS:
        demo = build_ops_demo(nranks, scheme, workers=min(nranks, 4))
        schedule = demo.scheduler.levelize()
        stats = demo.scheduler.execute()
        assert stats.global_syncs == schedule.level_count == 3
        results.append(read_dense(demo.ec, demo.C))
    for C in results:
        assert np.max(np.abs(C - results[0])) <= 1e-12 * np.max(np.abs(results[0]))
        assert np.all(C == -10.0)


@pytest.mark.acceptance(2)
def test_rank_invariance_random_programs():
    for seed in range(1000, 1020):
        prog = random_program(seed)
        runs = []
        for nranks in RANKS:
            res = run_program(prog, nranks=nranks, workers=min(nranks, 4))
            assert res.stats.global_syncs == res.schedule.level_count
            runs.append(res)
        for res in runs[1:]:
            assert max_rel_error(res.data, runs[0].data) <= 1e-12
            assert scans_close(res.scans, runs[0].scans)


# 3. levelization


@pytest.mark.acceptance(3)
def test_levelize_ops_demo():
    demo = build_ops_demo()
    sched = demo.scheduler.levelize()
    assert [[op.kind for op in lv] for lv in sched.levels] == [[OpKind.SET], [OpKind.ADD], [OpKind.MULT]]
    assert [op.kind for op in sched.prelude] == [OpKind.ALLOCATE]


@pytest.mark.acceptance(3)
def test_levelize_matches_longest_chain():
    for seed in range(100):
        prog = random_program(5000 + seed, max_ops=10)
        assert len(prog.ops) <= 10
        sched = levelize(prog.ops)
        assert sched.level_count == longest_chain(prog.ops), f"seed {seed}"
        for batch in sched.levels:
            for a, b in itertools.combinations(batch, 2):
                assert not conflicts(a, b)
        for p, q in itertools.combinations(range(len(prog.ops)), 2):
            if conflicts(prog.ops[p], prog.ops[q]):
                assert sched.level_of[p] < sched.level_of[q]


# 4. distribution


@pytest.mark.acceptance(4)
def test_round_robin_balance():
    spaces = [TiledIndexSpace(IndexSpace(20), 5), TiledIndexSpace(IndexSpace(17), [2, 7, 3, 5]), TiledIndexSpace(spin_space(12), 3)]
    for dims in itertools.product(spaces, repeat=2):
        for pred in (None, "spin"):
            t = Tensor(list(dims), predicate=pred)
            for nranks in range(1, 10):
                pg = ProcessGroup(nranks)
                for p in (place_round_robin_dense(t, pg), place_round_robin_sparse(t, pg)):
                    loads = p.block_loads()
                    assert max(loads) - min(loads) <= 1


@pytest.mark.acceptance(4)
def test_sparse_over_dense_ratio():
    d = TiledIndexSpace(spin_space(20), 5)
    t = Tensor([d, d], predicate="spin")
    pg = ProcessGroup(4)
    sparse = memory_footprint(place_round_robin_sparse(t, pg), t)
    dense = memory_footprint(place_round_robin_dense(t, pg), t)
    nonzero_fraction = sparse.nonzero_elements / t.size
    assert nonzero_fraction == 0.5
    assert sparse.total_elements / dense.total_elements == 0.5


@pytest.mark.acceptance(4)
def test_effective_grid_examples():
    assert effective_grid(12, 2) == (4, 3)
    assert effective_grid(7, 2) == (7, 1)


# 5. factorization


@pytest.mark.acceptance(5)
def test_factorization_identity_and_costs():
    start = time.perf_counter()
    for n_o, n_u in [(2, 3), (3, 4), (4, 4)]:
        for seed in range(5):
            _, ct = synth_cc_inputs(n_o, n_u, seed)
            I = build_intermediate(ct.v, ct.t2)
            fac = term_factorized(I.value, ct.t2)
            nai = term_naive(ct.v, ct.t2)
            scale = np.max(np.abs(nai.value))
            assert np.max(np.abs(fac.value - nai.value)) <= 1e-10 * scale
            assert nai.multiply_adds == n_o**4 * n_u**4 == naive_cost(n_o, n_u)
            assert I.multiply_adds + fac.multiply_adds == 2 * n_o**4 * n_u**2 == factorized_cost(n_o, n_u)
        rep = run_cc_demo(n_o=n_o, n_u=n_u, seed=0, nranks=2)
        assert rep["flops"]["dsl"]["factorized_multiply_adds"] == 2 * n_o**4 * n_u**2
        assert rep["checks"]["dsl_factorized"]["rel_error"] <= 1e-10
    assert time.perf_counter() - start <= 30.0


# 6. Cholesky


@pytest.mark.acceptance(6)
@pytest.mark.parametrize("rank,dim", [(1, 16), (5, 16), (10, 40), (5, 64), (10, 64)])
def test_cholesky_recovers_rank(rank, dim):
    rng = np.random.default_rng(rank * 100 + dim)
    G = rng.standard_normal((dim, rank))
    V = G @ G.T
    L, info = cholesky_decompose(V, tol=1e-12, return_info=True)
    assert L.shape[1] == rank == info.rank
    assert np.max(np.abs(L @ L.T - V)) <= 1e-10


@pytest.mark.acceptance(6)
def test_cholesky_antisymmetrized_reconstruction():
    n_o, n_u = 3, 3
    _, ct = synth_cc_inputs(n_o, n_u, seed=4)
    n = n_o + n_u
    tol = 1e-12
    L = cholesky_decompose(ct.V, tol=tol)
    v = reconstruct_v(L.reshape(n, n, -1))
    assert np.max(np.abs(v - ct.v)) <= 2 * tol
    assert np.max(np.abs(v + v.transpose(1, 0, 2, 3))) <= tol
    assert np.max(np.abs(v + v.transpose(0, 1, 3, 2))) <= tol


# 7. triples


@pytest.mark.acceptance(7)
def test_triples_terms_match_oracle():
    n_o, n_u = 3, 3
    _, ct = synth_cc_inputs(n_o, n_u, seed=11)
    for i, j, k in itertools.combinations(range(n_o), 3):
        for a, b, c in itertools.combinations(range(n_u), 3):
            A, B, total = assemble_VT2(ct.v, ct.t2, i, j, k, a, b, c)
            oA, oB = cc_oracle.vt2(ct.v, ct.t2, i, j, k, a, b, c)
            assert abs(A - oA) <= 1e-13 and abs(B - oB) <= 1e-13
            assert abs(total - (oA + oB)) <= 1e-13
            assert total == A + B
            S = assemble_VT1(ct.v, ct.t1, i, j, k, a, b, c)
            assert abs(S - cc_oracle.vt1(ct.v, ct.t1, i, j, k, a, b, c)) <= 1e-13


@pytest.mark.acceptance(7)
def test_triples_energy_and_scaling():
    n_o, n_u = 3, 4
    mo, ct = synth_cc_inputs(n_o, n_u, seed=2)
    e = energy_T(ct.v, ct.t1, ct.t2, mo.eps)
    ref = cc_oracle.energy(ct.v, ct.t1, ct.t2, mo.eps)
    assert abs(e - ref) <= 1e-12 * abs(ref)
    zero = np.zeros_like(ct.t1)
    e1, _ = energy_T_parts(ct.v, zero, ct.t2, mo.eps)
    e2, _ = energy_T_parts(2.0 * ct.v, zero, ct.t2, mo.eps)
    assert abs(e2 - 4.0 * e1) <= 1e-12 * abs(e2)


# 8. block sparsity


def _spin_contraction(predicate, nranks=4):
    d = TiledIndexSpace(spin_space(12), 3)
    i, j, k = d.labels(3, "i j k")
    A = Tensor([d, d], predicate=predicate, name="A")
    B = Tensor([d, d], predicate=predicate, name="B")
    C = Tensor([d, d], predicate=predicate, name="C")
    ec = ExecutionContext(nranks, "rr-sparse", workers=1)
    sch = Scheduler(ec)
    sch.allocate(A, B, C).execute()
    rng = np.random.default_rng(8)
    for t in (A, B):
        write_dense(ec, t, np.where(nonzero_mask(t), rng.standard_normal(t.shape), 0.0))
    sch(C(i, j).assign(A(i, k) * B(k, j)))
    stats = sch.execute()
    return ec, (A, B, C), stats


@pytest.mark.acceptance(8)
def test_block_sparsity_storage_flops_and_values():
    ec, (A, B, C), sparse = _spin_contraction("spin")
    _, _, dense = _spin_contraction(None)

    # storage: only nonzero blocks exist, at their true volume
    for t in (A, B, C):
        p = ec.placement(t)
        assert set(p.owner) == set(t.nonzero_blocks())
    stored = sum(ec.store.allocated_elements(r) for r in range(ec.nranks))
    nonzero = sum(math.prod(t.block_extents(b)) for t in (A, B, C) for b in t.nonzero_blocks())
    assert stored == nonzero == (A.size + B.size + C.size) // 2

    # tasks and flops: predicted from the block predicate alone
    grid = C.grid
    zero_lhs = sum(not C.is_nonzero(b) for b in C.block_ids())
    assert sparse.skipped_tasks == zero_lhs
    assert sparse.total_tasks == C.nblocks - zero_lhs
    assert dense.total_tasks == C.nblocks
    predicted = 0
    for x, y, z in itertools.product(range(grid[0]), range(grid[1]), range(A.grid[1])):
        if C.is_nonzero((x, y)) and A.is_nonzero((x, z)) and B.is_nonzero((z, y)):
            predicted += math.prod(C.block_extents((x, y))) * A.block_extents((x, z))[1]
    assert sparse.multiply_adds == predicted
    assert sparse.multiply_adds / dense.multiply_adds == 0.25

    # values: zeros in, zeros out, equal to the dense product
    a, b = read_dense(ec, A), read_dense(ec, B)
    ref = np.where(nonzero_mask(C), a @ b, 0.0)
    assert np.allclose(a @ b, ref, rtol=0, atol=1e-12)
    assert np.max(np.abs(read_dense(ec, C) - ref)) <= 1e-12 * np.max(np.abs(ref))
