import numpy as np
import pytest
import scipy.sparse as sp

from epss import analysis, precond
from epss.precond import (
    PRESETS,
    EpssConfig,
    beta_double_star,
    beta_double_star_radicand,
    beta_star,
    build_generic,
    build_operator,
    build_sepss,
    dense_expanded,
    dense_factored,
    dense_sepss,
    iteration_operator,
    preset_config,
    stationary_solve,
)
from epss.saddle import BlockVector, SaddleSystem, ShiftPair, SplittingSet, assemble_full

from _systems import one_by_one, random_system

I1 = sp.identity(1, format="csr")


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# generic build ----------------------------------------------------------------

def test_generic_diagonal_case():
    n, m = 3, 2
    sys = SaddleSystem(sp.identity(n), sp.csr_matrix((m, n)), sp.csr_matrix((m, m)))
    Pb = sp.diags([2.0, 5.0])
    split = SplittingSet(sys.A, sp.csr_matrix((n, n)), sys.B, sys.B, sys.C, sys.C)
    cfg = EpssConfig(split, ShiftPair(sp.identity(n), Pb))
    op = build_generic(sys, cfg)
    x = np.array([2.0, 4.0, 6.0, 2.0, 5.0])
    assert np.allclose(op.apply(x), [1.0, 2.0, 3.0, 1.0, 1.0])


def test_expanded_equals_factored():
    for seed in range(100):
        sys = random_system(seed, n=int(np.random.default_rng(seed).integers(2, 26)))
        preset = PRESETS[seed % len(PRESETS)]
        cfg = preset_config(preset, sys, 10.0 ** ((seed % 5) - 2), 10.0 ** ((seed % 3) - 1))
        F = dense_factored(cfg)
        assert rel(dense_expanded(sys, cfg), F) <= 1e-12, preset


def test_generic_round_trip():
    rng = np.random.default_rng(0)
    for seed in range(30):
        sys = random_system(seed)
        cfg = preset_config(PRESETS[seed % len(PRESETS)], sys, 0.5, 2.0)
        op = build_generic(sys, cfg)
        w = rng.standard_normal(sys.size)
        assert rel(op.apply(dense_factored(cfg) @ w), w) <= 1e-10


def test_generic_singular_preconditioner_error():
    sys = random_system(0, n=4, m=2)
    # A_P = -P_alpha makes the (1,1) block of Sigma + P vanish
    bad = SplittingSet(-sp.identity(4), sys.A + sp.identity(4), sys.B * 0, sys.B, sys.C * 0, sys.C)
    cfg = EpssConfig(bad, ShiftPair(sp.identity(4), sp.identity(2)))
    with pytest.raises(precond.PreconditionerError, match="Sigma \\+ P"):
        build_generic(sys, cfg)


# SEPSS --------------------------------------------------------------------------

def test_sepss_hand_case():
    sys = one_by_one()
    op = build_sepss(sys, 1.0, I1, 1.0, I1)
    cfg = precond.sepss_config(sys, 1.0, I1, 1.0, I1)
    assert np.allclose(dense_sepss(sys, cfg), [[3, 0], [0, 1]])
    assert np.allclose(op._parts["N"].toarray(), [[3.0]])
    assert np.allclose(op.apply(np.array([3.0, 1.0])), [1.0, 1.0])
    assert np.array_equal(op.apply(np.zeros(2)), np.zeros(2))


def test_sepss_diagonal_c_steps_are_scalings():
    sys = random_system(2, n=8, m=4, c_kind="spd")
    sys = SaddleSystem(sys.A, sys.B, sp.diags(np.arange(1.0, 5.0)))
    cfg = preset_config("SEPSS", sys, 0.1, 1.0)
    op = build_operator(sys, cfg)
    T = op._parts["T"]
    assert op._parts["t_lower"] and (T - sp.diags(T.diagonal())).nnz == 0
    assert cfg.splitting.C_S.nnz == 0


def test_sepss_matches_dense():
    rng = np.random.default_rng(3)
    for seed in range(100):
        n = int(rng.integers(1, 31))
        m = int(rng.integers(1, min(n, 30) + 1))
        sys = random_system(seed, n=n, m=m)
        alpha, beta = 10.0 ** rng.uniform(-2, 1), 10.0 ** rng.uniform(-2, 1)
        Q1, Q2 = precond.default_shift_bases(sys)
        op = build_sepss(sys, alpha, Q1, beta, Q2)
        P = dense_sepss(sys, precond.sepss_config(sys, alpha, Q1, beta, Q2))
        x = rng.standard_normal(sys.size)
        y = op.apply(x)
        assert rel(P @ y, x) <= 1e-10
        assert rel(y, np.linalg.solve(P, x)) <= 1e-10


def test_sepss_dense_product_equals_factored_form():
    for seed in range(20):
        sys = random_system(seed)
        cfg = preset_config("SEPSS", sys, 0.3, 3.0)
        assert rel(dense_sepss(sys, cfg), dense_factored(cfg)) <= 1e-12


def test_sepss_non_diagonal_p_beta_uses_lu():
    sys = random_system(4, n=10, m=5)
    Q2 = sp.csr_matrix(np.eye(5) + 0.2 * (np.eye(5, k=1) + np.eye(5, k=-1)))
    op = build_sepss(sys, 0.5, sp.identity(10), 1.0, Q2)
    assert not op._parts["t_lower"]
    P = dense_sepss(sys, precond.sepss_config(sys, 0.5, sp.identity(10), 1.0, Q2))
    x = np.random.default_rng(4).standard_normal(15)
    assert rel(P @ op.apply(x), x) <= 1e-10


def test_sepss_rejects_skew_a_part():
    sys = random_system(5, n=6, m=3)
    cfg = preset_config("HSS", sys, 1.0)
    with pytest.raises(ValueError, match="A_S = 0"):
        build_operator(sys, cfg, mode="sepss")


def test_sepss_factorization_failure_names_subsystem():
    # zero P_beta diagonal and zero C: the triangular factor has a zero pivot
    sys = SaddleSystem(sp.identity(2), sp.csr_matrix((1, 2)), sp.csr_matrix((1, 1)))
    split = SplittingSet(sys.A, sp.csr_matrix((2, 2)), sys.B, sys.B, sys.C, sys.C)
    cfg = EpssConfig(split, ShiftPair(sp.identity(2), sp.csr_matrix((1, 1))), "SEPSS")
    with pytest.raises(precond.PreconditionerError, match="C_P \\+ P_beta"):
        build_operator(sys, cfg)


# presets --------------------------------------------------------------------------

def test_hss_preset_structure():
    sys = random_system(6)
    cfg = preset_config("HSS", sys, 0.7, 123.0)
    assert cfg.splitting.B_P.nnz == 0
    assert (cfg.shifts.P_alpha.diagonal() == 0.7).all() and (cfg.shifts.P_beta.diagonal() == 0.7).all()
    assert cfg.splitting.C_S.nnz == 0


def test_epss_preset_keeps_c():
    sys = random_system(7)
    cfg = preset_config("EPSS", sys, 0.1, 1.0)
    assert (cfg.splitting.C_P != sys.C).nnz == 0
    Q1, Q2 = precond.default_shift_bases(sys)
    assert np.allclose(cfg.shifts.P_alpha.diagonal(), 0.1 * 2 * sys.A.diagonal())
    assert np.allclose(cfg.shifts.P_beta.diagonal(), 1.0 * (1e-4 + 2 * sys.C.diagonal()))


@pytest.mark.parametrize("preset", PRESETS)
def test_every_preset_splitting_is_valid(preset):
    for seed in range(20):
        sys = random_system(seed)
        cfg = preset_config(preset, sys, 0.5, 2.0)
        assert cfg.splitting.check(sys) == []
        assert cfg.shifts.check() == []
        s = cfg.splitting
        assert s.B_P.nnz == 0 or s.B_S.nnz == 0


def test_preset_table():
    sys = random_system(8, n=10, m=4)
    for preset in PRESETS:
        cfg = preset_config(preset, sys, 0.5, 2.0)
        s = cfg.splitting
        hermitian = preset in ("HSS", "GHSS", "EHSS")
        assert (s.A_S.nnz > 0) == hermitian
        assert (s.B_P.nnz > 0) == (preset in ("SS", "GSS", "ESS", "SEPSS"))
        assert (s.C_S.nnz > 0) == (preset == "SEPSS")
        expected_beta = 0.5 if preset in ("HSS", "PSS", "SS") else 2.0
        assert cfg.beta == expected_beta


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown preset"):
        preset_config("RHSS", random_system(0), 1.0)


def test_config_rejects_nonpositive_parameters():
    with pytest.raises(ValueError):
        preset_config("GSS", random_system(0), 1.0, 0.0)


# beta heuristics ------------------------------------------------------------------

def _hand_system():
    # n = m = 2, A = I, B = I, C = [[0, 1], [-1, 0]]: C_P = 0, C_S = C
    C = sp.csr_matrix(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    return SaddleSystem(sp.identity(2), sp.identity(2), C)


def test_beta_star_hand_case():
    sys = _hand_system()
    I2 = sp.identity(2, format="csr")
    C_P, C_S = sp.csr_matrix((2, 2)), sys.C
    assert beta_star(sys, 1.0, I2, I2, C_P, C_S) == pytest.approx(np.sqrt(0.5), rel=1e-15, abs=0)


def test_beta_double_star_hand_case():
    sys = _hand_system()
    I2 = sp.identity(2, format="csr")
    assert beta_double_star(sys, I2, sp.csr_matrix((2, 2)), sys.C) == 1.0


def test_beta_zero_when_c_s_vanishes():
    sys = random_system(9, c_kind="spd")
    sys = SaddleSystem(sys.A, sys.B, sp.diags(np.ones(sys.m)))
    Q1, Q2 = precond.default_shift_bases(sys)
    assert beta_star(sys, 1e-4, Q1, Q2) == 0.0
    assert beta_double_star(sys, Q2) == 0.0


def dense_beta_star(sys, alpha, Q1, Q2):
    A, B = sys.A.toarray(), sys.B.toarray()
    C_P, C_S = (M.toarray() for M in precond.triangular_splitting(sys.C))
    Q1, Q2 = Q1.toarray(), Q2.toarray()
    inner = (B @ np.linalg.inv(A + alpha * Q1) @ B.T + C_P) @ np.linalg.inv(Q2) @ C_S
    return np.sqrt(np.linalg.norm(inner, "fro") / np.linalg.norm(Q2, "fro"))


def dense_beta_double_star_radicand(sys, Q2):
    B = sys.B.toarray()
    C_P, C_S = (M.toarray() for M in precond.triangular_splitting(sys.C))
    Q2i = np.linalg.inv(Q2.toarray())
    return -np.trace((B @ B.T + C_P.T @ C_P) @ Q2i @ C_S @ C_S @ Q2i) / np.trace(Q2.toarray() @ Q2.toarray())


def test_beta_formulas_match_dense():
    for seed in range(50):
        sys = random_system(seed)
        if sys.m < 2:
            continue
        Q1, Q2 = precond.default_shift_bases(sys)
        assert rel(beta_star(sys, 1e-2, Q1, Q2), dense_beta_star(sys, 1e-2, Q1, Q2)) <= 1e-12
        r = beta_double_star_radicand(sys, Q2)
        assert r >= -1e-12
        assert abs(r - dense_beta_double_star_radicand(sys, Q2)) <= 1e-12 * max(abs(r), 1.0)


# iteration operator, stationary solve ---------------------------------------------------

def test_iteration_operator_hand_case():
    sys = one_by_one()
    gamma = iteration_operator(sys, build_sepss(sys, 1.0, I1, 1.0, I1))
    G = np.column_stack([gamma(e) for e in np.eye(2)])
    assert np.allclose(G, np.diag([-1.0 / 3.0, 1.0]))


def test_iteration_operator_zero_when_a_is_half_p():
    # P = 2 calA when Sigma = I, S = 0 and P_block = 2 calA - I
    sys = SaddleSystem(sp.identity(2) * 3, sp.csr_matrix((1, 2)), sp.identity(1) * 2)
    split = SplittingSet(sp.identity(2) * 5, sp.csr_matrix((2, 2)), sys.B, sys.B,
                         sp.identity(1) * 3, sp.csr_matrix((1, 1)))
    cfg = EpssConfig(split, ShiftPair(sp.identity(2), sp.identity(1)))
    op = build_generic(sys, cfg)
    gamma = iteration_operator(sys, op)
    G = np.column_stack([gamma(e) for e in np.eye(3)])
    assert np.allclose(G, 0.0, atol=1e-15)


def test_iteration_operator_matches_dense_gamma():
    for seed in range(50):
        sys = random_system(seed)
        cfg = preset_config(PRESETS[seed % len(PRESETS)], sys, 0.5, 2.0)
        gamma = iteration_operator(sys, build_operator(sys, cfg))
        G = np.column_stack([gamma(e) for e in np.eye(sys.size)])
        D = analysis.iteration_matrix_dense(sys, cfg)
        assert np.max(np.abs(G - D)) <= 1e-10 * max(1.0, np.max(np.abs(D)))


def test_stationary_zero_rhs():
    sys = random_system(0)
    op = build_operator(sys, preset_config("PSS", sys, 1.0))
    u, rep = stationary_solve(sys, op, np.zeros(sys.size))
    assert rep.converged and rep.iterations == 0 and np.array_equal(u, np.zeros(sys.size))


def test_stationary_hand_case():
    sys = one_by_one()
    op = build_sepss(sys, 1.0, I1, 1.0, I1)
    b = sys.matvec(np.array([1.0, 5.0]))  # = (2, 0)
    u, rep = stationary_solve(sys, op, b, u0=np.array([0.0, 0.7]), tol=1e-12, max_iters=100)
    assert rep.converged
    h = np.array(rep.residual_history)
    assert np.allclose(h[1:6] / h[:5], 1.0 / 3.0)
    assert u[1] == 0.7 and u[0] == pytest.approx(1.0)


def test_stationary_max_iters_is_report_not_exception():
    sys = random_system(1, n=10, m=5, c_kind="spd")
    op = build_operator(sys, preset_config("PSS", sys, 1e3))
    _, rep = stationary_solve(sys, op, sys.matvec(np.ones(sys.size)), max_iters=3)
    assert not rep.converged and rep.stop_reason == "max-iters" and rep.iterations == 3


def test_stationary_rate_bounded_by_nu():
    from epss.problems import ProblemSpec, gen_synthetic_singular

    sys = gen_synthetic_singular(ProblemSpec(kind="synthetic-singular", n=20, m=8, seed=3))
    cfg = preset_config("EPSS", sys, 1.0, 1.0)
    spec = analysis.certify(sys, cfg)
    assert spec.semi_convergent
    b = sys.matvec(np.ones(sys.size))
    _, rep = stationary_solve(sys, build_operator(sys, cfg), b, tol=0.0, max_iters=500)
    assert analysis.asymptotic_ratio(rep.residual_history) <= spec.nu + 0.02
