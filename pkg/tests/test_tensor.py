import copy

import numpy as np
import pytest

from tiletensor import (
    ALPHA,
    BETA,
    ExecutionContext,
    Scheduler,
    Tensor,
    TiledIndexSpace,
    accumulate_block,
    block_extents,
    dump_tensor,
    get_block,
    is_nonzero,
    make_tensor,
    put_block,
    read_dense,
    write_dense,
)
from tiletensor.demos import example_spaces, spin_space


@pytest.fixture
def sp():
    return example_spaces()


def test_block_grid(sp):
    A = make_tensor([sp.tM, sp.tK])
    assert A.shape == (30, 20) and A.nblocks == 8
    B = Tensor([sp.tK, sp.tN])
    assert B.nblocks == 40


def test_block_extents(sp):
    A = Tensor([sp.tM, sp.tK])
    assert block_extents(A, (1, 0)) == (20, 5)
    assert block_extents(A, (0, 3)) == (10, 5)
    assert Tensor([sp.tN]).block_extents((9,)) == (10,)
    with pytest.raises(IndexError):
        A.block_extents((2, 0))


def test_handles_are_shallow(sp):
    A = Tensor([sp.tM, sp.tK])
    assert copy.copy(A) is A and copy.deepcopy(A) is A
    B = A
    assert B == A and Tensor([sp.tM, sp.tK]) != A


def test_labeled_views(sp):
    A = Tensor([sp.tM, sp.tK], name="A")
    C = Tensor([sp.tM, sp.tN], name="C")
    i, j = sp.tM.labels(2, "i j")
    (l,) = sp.tK.labels(1, "l")
    (a,) = sp.tN.labels(1, "a")
    (x,) = sp.tK("first").labels(1, "x")
    assert str(A(i, l)) == "A(i,l)"
    assert str(C(i, a)) == "C(i,a)"
    with pytest.raises(ValueError):
        A(x, l)
    with pytest.raises(ValueError):
        A(i)
    A(i, x)  # sub-label on the K dim is fine


def test_predicates():
    d = TiledIndexSpace(spin_space(4), 2)
    assert d.tile_spin(0) == ALPHA and d.tile_spin(1) == BETA
    t = Tensor([d, d], predicate="spin")
    assert [b for b in t.block_ids() if is_nonzero(t, b)] == [(0, 0), (1, 1)]
    assert all(is_nonzero(Tensor([d, d]), b) for b in t.block_ids())
    with pytest.raises(IndexError):
        t.is_nonzero((0, 2))


def test_four_index_spin_predicate():
    d = TiledIndexSpace(spin_space(4), 2)
    t = Tensor([d] * 4, predicate="spin")
    nz = t.nonzero_blocks()
    assert len(nz) == 6
    assert all(d.tile_spin(p) + d.tile_spin(q) == d.tile_spin(r) + d.tile_spin(s) for p, q, r, s in nz)


def _ctx(tensors, nranks=2, scheme="rr-sparse"):
    ec = ExecutionContext(nranks, scheme, workers=1)
    Scheduler(ec).allocate(*tensors).execute()
    return ec


def test_block_roundtrip_and_accumulate(sp):
    A = Tensor([sp.tM, sp.tK], name="A")
    ec = _ctx([A])
    vals = np.arange(50.0).reshape(10, 5)
    put_block(ec, A, (0, 1), vals)
    assert np.array_equal(get_block(ec, A, (0, 1)).data, vals)
    put_block(ec, A, (0, 2), np.zeros((10, 5)))
    accumulate_block(ec, A, (0, 2), vals)
    accumulate_block(ec, A, (0, 2), vals)
    assert np.array_equal(get_block(ec, A, (0, 2)).data, 2 * vals)
    with pytest.raises(ValueError):
        put_block(ec, A, (0, 1), np.zeros((5, 5)))


def test_zero_block_reads_and_rejects_writes():
    d = TiledIndexSpace(spin_space(4), 2)
    t = Tensor([d, d], predicate="spin")
    ec = _ctx([t])
    assert np.array_equal(get_block(ec, t, (0, 1)).data, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        put_block(ec, t, (0, 1), np.ones((2, 2)))
    with pytest.raises(ValueError):
        write_dense(ec, t, np.ones((4, 4)))


def test_unallocated_access(sp):
    A = Tensor([sp.tM, sp.tK])
    ec = ExecutionContext(1)
    with pytest.raises(RuntimeError):
        get_block(ec, A, (0, 0))
    with pytest.raises(RuntimeError):
        put_block(ec, A, (0, 0), np.zeros((10, 5)))


def test_remote_get_counting(sp):
    A = Tensor([sp.tM, sp.tK])
    ec = _ctx([A], nranks=2)
    owner = ec.owner(A, (0, 0))
    before = ec.stats.remote_gets
    get_block(ec, A, (0, 0), rank=owner)
    assert ec.stats.remote_gets == before
    get_block(ec, A, (0, 0), rank=1 - owner)
    assert ec.stats.remote_gets == before + 1


def test_dense_roundtrip_and_dump(tmp_path, sp):
    A = Tensor([sp.tM, sp.tK], name="A")
    ec = _ctx([A], nranks=3, scheme="grid")
    x = np.random.default_rng(0).standard_normal(A.shape)
    write_dense(ec, A, x)
    assert np.array_equal(read_dense(ec, A), x)
    doc = dump_tensor(ec, A, tmp_path / "a.json")
    assert doc["shape"] == [30, 20] and len(doc["blocks"]) == 8
    assert doc["dims"][0]["tiles"] == [10, 20]
    assert (tmp_path / "a.json").exists()


def test_rr_dense_slot_padding_is_real():
    sp = example_spaces()
    A = Tensor([sp.tM, sp.tK])
    ec = _ctx([A], nranks=3, scheme="rr-dense")
    assert sum(ec.store.allocated_elements(r) for r in range(3)) == 800


def test_order_zero_tensor():
    s = Tensor([], name="s")
    assert s.shape == () and s.nblocks == 1 and list(s.block_ids()) == [()]
    ec = _ctx([s], nranks=2)
    put_block(ec, s, (), np.array(3.0))
    assert read_dense(ec, s) == 3.0
