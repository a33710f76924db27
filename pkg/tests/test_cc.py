import itertools

import numpy as np
import pytest

import cc_oracle
from tiletensor.cc import (
    MOSpace,
    antisym_from_chem,
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


@pytest.fixture(scope="module")
def small():
    return synth_cc_inputs(3, 4, seed=5)


def test_inputs_are_deterministic_and_antisymmetric(small):
    mo, ct = small
    _, again = synth_cc_inputs(3, 4, seed=5)
    assert np.array_equal(ct.v, again.v) and np.array_equal(ct.t2, again.t2)
    v, t2 = ct.v, ct.t2
    assert np.allclose(v, -v.transpose(1, 0, 2, 3))
    assert np.allclose(v, -v.transpose(0, 1, 3, 2))
    assert np.allclose(v, v.transpose(2, 3, 0, 1))
    assert np.allclose(t2, -t2.transpose(1, 0, 2, 3)) and np.allclose(t2, -t2.transpose(0, 1, 3, 2))
    with pytest.raises(ValueError):
        synth_cc_inputs(1, 4)


def test_denominators_are_negative():
    mo, _ = synth_cc_inputs(2, 2, seed=7)
    for i, j, k in itertools.product(range(2), repeat=3):
        for a, b, c in itertools.product(range(2), repeat=3):
            assert mo.denominator(i, j, k, a, b, c) < 0
    with pytest.raises(ValueError):
        MOSpace(1, 1, np.array([1.0, 0.0]))


def test_costs():
    assert naive_cost(3, 4) == 3**4 * 4**4
    assert factorized_cost(3, 4) == 2 * 3**4 * 4**2


def test_intermediate_and_terms_vs_loops(small):
    mo, ct = small
    I = build_intermediate(ct.v, ct.t2)
    assert np.allclose(I.value, cc_oracle.intermediate(ct.v, ct.t2))
    assert np.allclose(I.value, -I.value.transpose(1, 0, 2, 3))
    assert np.allclose(I.value, -I.value.transpose(0, 1, 3, 2))
    ref = cc_oracle.doubles_term(ct.v, ct.t2)
    fac = term_factorized(I.value, ct.t2)
    naive = term_naive(ct.v, ct.t2)
    assert np.allclose(fac.value, ref) and np.allclose(naive.value, ref)
    assert I.multiply_adds + fac.multiply_adds == factorized_cost(3, 4)
    assert naive.multiply_adds == naive_cost(3, 4)


def test_zero_amplitudes_give_zero(small):
    _, ct = small
    z = np.zeros_like(ct.t2)
    assert not term_naive(ct.v, z).value.any()
    assert not term_factorized(build_intermediate(ct.v, z).value, z).value.any()
    assert assemble_VT1(ct.v, np.zeros_like(ct.t1), 0, 1, 2, 0, 1, 2) == 0.0
    assert assemble_VT2(np.zeros_like(ct.v), ct.t2, 0, 1, 2, 0, 1, 2)[2] == 0.0


def test_antisym_from_chem_on_outer_product():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 3))
    x = x + x.T
    W = np.einsum("pr,qs->prqs", x, x)
    v = antisym_from_chem(W)
    p, q, r, s = 0, 1, 2, 1
    assert v[p, q, r, s] == pytest.approx(x[p, r] * x[q, s] - x[p, s] * x[q, r])


def test_cholesky_identity():
    L, info = cholesky_decompose(np.eye(5), return_info=True)
    assert info.rank == 5 and info.residual == 0.0
    assert np.allclose(L @ L.T, np.eye(5))
    assert sorted(info.pivots) == list(range(5))


def test_cholesky_low_rank_and_history(small):
    _, ct = small
    L, info = cholesky_decompose(ct.V, tol=1e-12, return_info=True)
    assert info.rank <= ct.V.shape[0] and np.max(np.abs(L @ L.T - ct.V)) < 1e-10
    assert all(b <= a + 1e-15 for a, b in zip(info.history, info.history[1:]))
    n = int(round(ct.V.shape[0] ** 0.5))
    assert np.allclose(reconstruct_v(L.reshape(n, n, -1)), ct.v, atol=1e-10)
    assert np.allclose(reconstruct_v(L), ct.v, atol=1e-10)


def test_cholesky_rejects_bad_input():
    with pytest.raises(ValueError, match="positive semidefinite"):
        cholesky_decompose(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        cholesky_decompose(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        cholesky_decompose(np.ones((2, 3)))


def test_index_order_is_enforced(small):
    _, ct = small
    with pytest.raises(ValueError):
        assemble_VT2(ct.v, ct.t2, 1, 0, 2, 0, 1, 2)
    with pytest.raises(ValueError):
        assemble_VT1(ct.v, ct.t1, 0, 1, 2, 0, 0, 1)


def test_vt2_matches_written_out_terms(small):
    _, ct = small
    for idx in [(0, 1, 2, 0, 1, 2), (0, 1, 2, 1, 2, 3), (0, 1, 2, 0, 2, 3)]:
        A, B, Y = assemble_VT2(ct.v, ct.t2, *idx)
        rA, rB = cc_oracle.vt2(ct.v, ct.t2, *idx)
        assert A == pytest.approx(rA) and B == pytest.approx(rB) and Y == pytest.approx(rA + rB)
        assert assemble_VT1(ct.v, ct.t1, *idx) == pytest.approx(cc_oracle.vt1(ct.v, ct.t1, *idx))


def _full_vt2(v, t2, oracle_sign):
    out = {}
    for occ in itertools.permutations(range(3)):
        a = cc_oracle.vt2(v, t2, *occ, 0, 1, 2, literal_sixth_sign=oracle_sign)
        out[occ] = a[0] + a[1]
    return out


def _parity(perm):
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j]:
                sign = -sign
    return sign


def test_sixth_sign_restores_antisymmetry(small):
    _, ct = small
    fixed = _full_vt2(ct.v, ct.t2, False)
    base = fixed[(0, 1, 2)]
    for perm, val in fixed.items():
        assert val == pytest.approx(_parity(perm) * base, abs=1e-12)
    literal = _full_vt2(ct.v, ct.t2, True)
    lb = literal[(0, 1, 2)]
    assert any(abs(val - _parity(p) * lb) > 1e-8 for p, val in literal.items())


def test_single_entry_t1_probe(small):
    _, ct = small
    v = ct.v
    t1 = np.zeros_like(ct.t1)
    t1[2, 1] = 1.0  # t1[k, b]
    n_o = 3
    got = assemble_VT1(v, t1, 0, 1, 2, 0, 1, 2)
    # only terms with t1 on (k, b) survive: -v[i,j,a,c]
    assert got == pytest.approx(-v[0, 1, n_o + 0, n_o + 2])


def test_energy_parts(small):
    mo, ct = small
    e_dd, e_sd = energy_T_parts(ct.v, ct.t1, ct.t2, mo.eps)
    assert e_dd + e_sd == pytest.approx(energy_T(ct.v, ct.t1, ct.t2, mo.eps))
    assert e_dd <= 0.0  # squares over negative denominators
    assert e_dd + e_sd == pytest.approx(cc_oracle.energy(ct.v, ct.t1, ct.t2, mo.eps))
    eps = mo.eps.copy()
    eps[:] = 0.0
    with pytest.raises(ZeroDivisionError):
        energy_T_parts(ct.v, ct.t1, ct.t2, eps)


@pytest.mark.parametrize("scheme", ["grid", "rr-sparse"])
def test_dsl_demo_agrees_with_kernels(scheme):
    rep = run_cc_demo(n_o=3, n_u=4, seed=1, nranks=4, scheme=scheme)
    assert rep["schema"] == "tiletensor.cc-report.v1"
    for name, chk in rep["checks"].items():
        assert chk["rel_error"] <= 1e-10, name
    assert rep["flops"]["dsl"]["factorized_multiply_adds"] == factorized_cost(3, 4)
    assert rep["flops"]["dsl"]["naive_multiply_adds"] == 2 * naive_cost(3, 4)
