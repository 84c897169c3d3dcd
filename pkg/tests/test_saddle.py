import numpy as np
import pytest
import scipy.sparse as sp

from epss import linalg
from epss.problems import ProblemSpec, gen_oseen
from epss.saddle import (
    BlockVector,
    SaddleSystem,
    ShiftPair,
    SplittingSet,
    apply_blocks,
    assemble_full,
    hermitian_skew_splitting,
    triangular_splitting,
    validate,
)

from _systems import random_system


def csr(a):
    return sp.csr_matrix(np.array(a, dtype=float))


def test_assemble_1x1():
    sys = SaddleSystem(csr([[2]]), csr([[1]]), csr([[1]]))
    assert np.array_equal(assemble_full(sys).toarray(), [[2, 1], [-1, 1]])


def test_assemble_zero_coupling():
    A = csr([[2, 1], [0, 3]])
    sys = SaddleSystem(A, sp.csr_matrix((1, 2)), sp.csr_matrix((1, 1)))
    full = assemble_full(sys).toarray()
    assert np.array_equal(full, np.block([[A.toarray(), np.zeros((2, 1))], [np.zeros((1, 3))]]))


def test_assemble_matches_apply_blocks():
    for seed in range(50):
        sys = random_system(seed)
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal(sys.n), rng.standard_normal(sys.m)
        left = linalg.spmv(assemble_full(sys), np.concatenate([x, y]))
        right = apply_blocks(sys, BlockVector(x, y)).stack()
        assert np.max(np.abs(left - right)) <= 1e-13 * max(1.0, np.max(np.abs(left)))


def test_apply_blocks_dimension_mismatch():
    sys = random_system(0, n=4, m=2)
    with pytest.raises(linalg.DimensionError):
        apply_blocks(sys, BlockVector(np.ones(3), np.ones(2)))


def test_block_vector_split_stack():
    u = np.arange(5.0)
    bv = BlockVector.split(u, 3)
    assert np.array_equal(bv.x, [0, 1, 2]) and np.array_equal(bv.stack(), u)


def test_system_dimension_checks():
    with pytest.raises(linalg.DimensionError):
        SaddleSystem(csr(np.eye(2)), csr(np.ones((1, 3))), csr([[1]]))
    with pytest.raises(linalg.DimensionError, match="m <= n"):
        SaddleSystem(csr([[1]]), csr([[1], [1]]), csr(np.eye(2)))


def test_system_blocks_canonical():
    A = sp.coo_matrix(([1.0, 1.0, 0.0], ([0, 0, 1], [0, 0, 1])), shape=(2, 2))
    sys = SaddleSystem(A, sp.csr_matrix((1, 2)), csr([[1]]))
    assert linalg.is_canonical(sys.A) and sys.A[0, 0] == 2.0


# validate ---------------------------------------------------------------------

def test_validate_singular_trivial():
    sys = SaddleSystem(sp.identity(2, format="csr"), csr([[0, 0]]), csr([[0]]))
    d = validate(sys)
    assert d.singular and d.dim_null_intersection == 1


def test_validate_c_identity():
    sys = random_system(3, n=6, m=3)
    sys = SaddleSystem(sys.A, sys.B, sp.identity(3, format="csr"))
    d = validate(sys)
    assert d.dim_null_sym_c == 0 and not d.singular


def test_validate_oseen_q16():
    d = validate(gen_oseen(ProblemSpec(grid=16)))
    assert d.a_positive_definite and d.c_positive_semidefinite
    assert d.b_rank_deficient and d.singular


def test_validate_never_raises_on_bad_system():
    bad = SaddleSystem(-sp.identity(3, format="csr"), sp.csr_matrix((1, 3)), csr([[-1]]))
    d = validate(bad)
    assert not d.a_positive_definite and not d.c_positive_semidefinite
    assert set(d.as_dict()) >= {"rank_b", "singular"}


def test_validate_symmetric_c_null_inclusion():
    for seed in range(10):
        sys = random_system(seed, n=12, m=6, c_kind="singular_sym")
        d = validate(sys)
        assert d.null_sym_c_in_null_c and d.dim_null_sym_c == 1


# splittings --------------------------------------------------------------------

def test_triangular_splitting_hand_case():
    C_P, C_S = triangular_splitting(csr([[1, 2], [0, 1]]))
    assert np.array_equal(C_P.toarray(), [[1, 0], [2, 1]])
    assert np.array_equal(C_S.toarray(), [[0, 2], [-2, 0]])


def test_triangular_splitting_diagonal():
    C = sp.diags([1.0, 2.0, 3.0], format="csr")
    C_P, C_S = triangular_splitting(C)
    assert (C_P != C).nnz == 0 and C_S.nnz == 0


def test_triangular_splitting_symmetric_reconstruction():
    rng = np.random.default_rng(0)
    for _ in range(20):
        F = rng.standard_normal((6, 6))
        C = sp.csr_matrix(F + F.T)
        C_P, C_S = triangular_splitting(C)
        L = sp.tril(C, k=-1)
        assert np.array_equal((C_P + C_S).toarray(), C.toarray())
        assert np.allclose(C_P.toarray(), (sp.diags(C.diagonal()) + 2 * L).toarray(), rtol=0, atol=0)
        assert (C_S + C_S.T).count_nonzero() == 0
        assert sp.triu(C_P, k=1).nnz == 0


def test_hermitian_skew_splitting_cases():
    S = csr([[2, 1], [1, 3]])
    P, K = hermitian_skew_splitting(S)
    assert (P != S).nnz == 0 and K.nnz == 0
    K0 = csr([[0, 1], [-1, 0]])
    P, K = hermitian_skew_splitting(K0)
    assert P.nnz == 0 and (K != K0).nnz == 0
    P, K = hermitian_skew_splitting(csr([[1, 2], [0, 1]]))
    assert np.array_equal(P.toarray(), [[1, 1], [1, 1]])
    assert np.array_equal(K.toarray(), [[0, 1], [-1, 0]])


def test_splitting_check_reports_violations():
    sys = random_system(1, n=5, m=2)
    good = SplittingSet(sys.A, sp.csr_matrix((5, 5)), sys.B, sp.csr_matrix((2, 5)), sys.C, sp.csr_matrix((2, 2)))
    assert good.check(sys) == []
    wrong_sum = SplittingSet(sys.A, sp.identity(5), sys.B, sp.csr_matrix((2, 5)), sys.C, sp.csr_matrix((2, 2)))
    issues = wrong_sum.check(sys)
    assert any("A_P + A_S" in p for p in issues) and any("A_S is not skew" in p for p in issues)
    not_pd = SplittingSet(sys.A * 0, sys.A, sys.B, sp.csr_matrix((2, 5)), sys.C, sp.csr_matrix((2, 2)))
    assert "A_P is not positive definite" in not_pd.check(sys)


def test_shift_pair_check():
    assert ShiftPair(sp.identity(3), sp.identity(2) * 2).check() == []
    issues = ShiftPair(csr([[1, 1], [0, 1]]), csr([[-1]])).check()
    assert issues == ["P_alpha is not symmetric", "P_beta is not positive definite"]
    sigma = ShiftPair(sp.identity(2), sp.identity(1) * 3).sigma().toarray()
    assert np.array_equal(sigma, np.diag([1, 1, 3]))
