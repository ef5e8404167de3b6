import math

import numpy as np
import pytest
import scipy.linalg as sla
from conftest import energy_M, identity_M, inverse_M, stacked_lstsq
from hypothesis import given, settings
from hypothesis import strategies as st

from stochlspg import fem
from stochlspg.gpc import build_basis, gauss_rule, hermite_space
from stochlspg.projection import (FactorizationError, NormalEquations, SingularSystemError,
                                  WeightingScheme, analytic_tensors,
                                  assemble_analytic_lspg_ata, assemble_analytic_sg,
                                  assemble_normal_equations, galerkin_residual,
                                  galerkin_system, objective_value,
                                  petrov_galerkin_residual, solve_analytic_sg, solve_lspg,
                                  solve_pseudospectral, solve_stochastic_galerkin,
                                  solve_weighted_lspg)
from stochlspg.sysmodel import ParamSystem, expand_operator, scalar_toy

SPACE = hermite_space()
SCHEMES = [WeightingScheme.energy(), WeightingScheme.identity(), WeightingScheme.inverse()]


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestWeightingScheme:
    def test_energy_needs_spd(self):
        sys = ParamSystem(1, lambda xi: [[1.0]], lambda xi: [1.0], spd=False)
        with pytest.raises(ValueError, match="SPD"):
            WeightingScheme.energy(sys)

    def test_goal_needs_qoi(self):
        with pytest.raises(ValueError):
            WeightingScheme("goal")

    def test_unknown(self):
        with pytest.raises(ValueError):
            WeightingScheme("bogus")


class TestNormalEquations:
    def test_identity_weighting_identity_operator(self):
        sys = ParamSystem(2, lambda xi: np.eye(2), lambda xi: np.ones(2))
        ne = assemble_normal_equations(sys, build_basis(SPACE, 3), gauss_rule(SPACE, 10),
                                       WeightingScheme.identity())
        np.testing.assert_allclose(ne.T1, np.eye(8), atol=1e-13)

    def test_inverse_weighting_gives_identity(self, spd_toy):
        ne = assemble_normal_equations(spd_toy, build_basis(SPACE, 3), gauss_rule(SPACE, 12),
                                       WeightingScheme.inverse())
        np.testing.assert_allclose(ne.T1, np.eye(12), atol=1e-12)

    def test_energy_weighting_is_galerkin_matrix(self):
        # M A = C^{-1} A so (MA)^T MA = A^T C^{-T} C^{-1} A = A
        A0 = np.array([[2.0, 0.5], [0.5, 1.0]])
        sys = ParamSystem(2, lambda xi: A0 * math.exp(0.4 * xi) + np.eye(2),
                          lambda xi: np.array([1.0, xi]), spd=True)
        basis = build_basis(SPACE, 2)
        rule = gauss_rule(SPACE, 15)
        ne = assemble_normal_equations(sys, basis, rule, WeightingScheme.energy())
        oracle = np.zeros((6, 6))
        for xi, w in zip(rule.nodes, rule.weights):
            psi = basis.evaluate(xi)
            oracle += w * np.kron(np.outer(psi, psi), sys.A(xi))
        np.testing.assert_allclose(ne.T1, oracle, rtol=1e-12, atol=1e-13)

    def test_symmetric_and_semidefinite_flag(self, diffusion1, rule30):
        basis = build_basis(SPACE, 2)
        ne = assemble_normal_equations(diffusion1.system, basis, rule30,
                                       WeightingScheme.goal(diffusion1.qoi))
        assert np.array_equal(ne.T1, ne.T1.T)
        assert ne.semidefinite  # 20 outputs < 49 unknowns
        ne = assemble_normal_equations(diffusion1.system, basis, rule30,
                                       WeightingScheme.identity())
        assert not ne.semidefinite

    def test_objective_at_zero_is_T3(self, spd_toy):
        ne = assemble_normal_equations(spd_toy, build_basis(SPACE, 2), gauss_rule(SPACE, 10),
                                       WeightingScheme.identity())
        assert objective_value(ne, np.zeros(9)) == ne.T3
        with pytest.raises(ValueError):
            objective_value(ne, np.zeros(4))

    def test_factorization_error_reports_node(self):
        # the middle node of the 3-point rule is zero up to roundoff
        sys = ParamSystem(1, lambda xi: np.array([[round(xi, 8)]]), lambda xi: np.array([1.0]))
        rule = gauss_rule(SPACE, 3)
        with pytest.raises(FactorizationError) as info:
            assemble_normal_equations(sys, build_basis(SPACE, 1), rule,
                                      WeightingScheme.inverse())
        assert info.value.node == 1
        assert abs(info.value.xi) < 1e-14

    def test_energy_rejects_nonsymmetric_system(self):
        sys = ParamSystem(1, lambda xi: [[1.0]], lambda xi: [1.0], spd=False)
        with pytest.raises(ValueError):
            assemble_normal_equations(sys, build_basis(SPACE, 1), gauss_rule(SPACE, 4),
                                      WeightingScheme("energy"))


class TestSolveLSPG:
    def test_polynomial_rhs_identity(self):
        basis = build_basis(SPACE, 3)
        v = np.array([1.0, 2.0])
        sys = ParamSystem(2, lambda xi: np.eye(2), lambda xi: basis.evaluate(xi)[2] * v)
        sol = solve_weighted_lspg(sys, basis, gauss_rule(SPACE, 10), WeightingScheme.identity())
        expected = np.zeros(8)
        expected[4:6] = v
        np.testing.assert_allclose(sol.coeffs, expected, atol=1e-13)

    @pytest.mark.parametrize("scheme,M_of", list(zip(SCHEMES, [energy_M, identity_M, inverse_M])),
                             ids=["energy", "identity", "inverse"])
    def test_matches_stacked_least_squares(self, spd_toy, scheme, M_of):
        basis = build_basis(SPACE, 4)
        rule = gauss_rule(SPACE, 20)
        sol = solve_weighted_lspg(spd_toy, basis, rule, scheme)
        oracle = stacked_lstsq(spd_toy, basis, rule, M_of)
        assert rel(sol.coeffs, oracle) < 1e-9

    def test_goal_oriented_minimum_norm(self, spd_toy):
        qoi = fem.qoi_f1(3, 2, "sin", seed=4)
        basis = build_basis(SPACE, 3)
        rule = gauss_rule(SPACE, 20)
        sol = solve_weighted_lspg(spd_toy, basis, rule, WeightingScheme.goal(qoi))
        oracle = stacked_lstsq(spd_toy, basis, rule, lambda A, xi: qoi.F(xi) @ sla.inv(A))
        assert rel(sol.coeffs, oracle) < 1e-8
        assert any("minimum-norm" in w for w in sol.warnings)

    def test_stationarity_and_convexity(self, spd_toy):
        rng = np.random.default_rng(0)
        basis = build_basis(SPACE, 4)
        for scheme in SCHEMES:
            ne = assemble_normal_equations(spd_toy, basis, gauss_rule(SPACE, 20), scheme)
            sol = solve_lspg(ne)
            grad = 2 * ne.T1 @ sol.coeffs - 2 * ne.T2
            assert np.linalg.norm(grad) <= 1e-10 * np.linalg.norm(2 * ne.T2)
            best = objective_value(ne, sol.coeffs)
            assert best >= -1e-14 * ne.T3
            assert sol.objective == pytest.approx(best, rel=1e-8, abs=1e-14)
            for _ in range(10):
                d = rng.standard_normal(sol.coeffs.size) * 1e-3
                assert objective_value(ne, sol.coeffs + d) > best

    def test_cg_matches_cholesky(self, diffusion1, rule30):
        basis = build_basis(SPACE, 3)
        ne = assemble_normal_equations(diffusion1.system, basis, rule30,
                                       WeightingScheme.energy())
        a = solve_lspg(ne, "cholesky").coeffs
        b = solve_lspg(ne, "cg").coeffs
        assert rel(b, a) < 1e-9
        with pytest.raises(ValueError):
            solve_lspg(ne, "qr")

    def test_singular_reports_pivot(self):
        basis = build_basis(SPACE, 1)
        ne = NormalEquations(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([1.0, 0.0]), 1.0,
                             basis, "identity")
        with pytest.raises(SingularSystemError, match="pivot"):
            solve_lspg(ne)

    def test_objective_decreases_with_degree(self, diffusion1, rule30):
        vals = [solve_weighted_lspg(diffusion1.system, build_basis(SPACE, p), rule30,
                                    WeightingScheme.identity()).objective for p in range(6)]
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))

    def test_timings_recorded(self, spd_toy):
        sol = solve_weighted_lspg(spd_toy, build_basis(SPACE, 2), gauss_rule(SPACE, 8),
                                  WeightingScheme.identity())
        assert set(sol.timings) == {"assembly", "solve"}
        assert all(t >= 0 for t in sol.timings.values())


class TestStochasticGalerkin:
    def test_unit_problem(self):
        sys = scalar_toy(lambda xi: 1.0, lambda xi: 1.0)
        basis = build_basis(SPACE, 3)
        rule = gauss_rule(SPACE, 8)
        for sol in (solve_stochastic_galerkin(sys, basis, rule),
                    solve_pseudospectral(sys, basis, rule),
                    solve_weighted_lspg(sys, basis, rule, WeightingScheme.identity())):
            np.testing.assert_allclose(sol.coeffs, [1, 0, 0, 0], atol=1e-14)

    def test_identity_operator_projects_rhs(self):
        basis = build_basis(SPACE, 3)
        sys = scalar_toy(lambda xi: 1.0, lambda xi: basis.evaluate(xi)[2])
        rule = gauss_rule(SPACE, 8)
        for sol in (solve_stochastic_galerkin(sys, basis, rule),
                    solve_pseudospectral(sys, basis, rule)):
            np.testing.assert_allclose(sol.coeffs, [0, 0, 1, 0], atol=1e-14)

    def test_constant_operator(self):
        A0 = np.array([[4.0, 1.0], [1.0, 3.0]])
        v = np.array([1.0, -1.0])
        basis = build_basis(SPACE, 3)
        sys = ParamSystem(2, lambda xi: A0, lambda xi: basis.evaluate(xi)[1] * v, spd=True)
        sol = solve_stochastic_galerkin(sys, basis, gauss_rule(SPACE, 10))
        expected = np.zeros((4, 2))
        expected[1] = np.linalg.solve(A0, v)
        np.testing.assert_allclose(sol.blocks, expected, atol=1e-14)

    def test_galerkin_orthogonality(self, diffusion1, rule30):
        for p in (1, 4):
            sol = solve_stochastic_galerkin(diffusion1.system, build_basis(SPACE, p), rule30)
            r = galerkin_residual(diffusion1.system, sol, rule30)
            _, rhs = galerkin_system(diffusion1.system, sol.basis, rule30)
            assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(rhs)

    def test_equals_energy_lspg(self, spd_toy):
        basis = build_basis(SPACE, 5)
        rule = gauss_rule(SPACE, 25)
        sg = solve_stochastic_galerkin(spd_toy, basis, rule)
        ls = solve_weighted_lspg(spd_toy, basis, rule, WeightingScheme.energy())
        assert rel(ls.coeffs, sg.coeffs) < 1e-8

    def test_nonsymmetric_falls_back_to_lu(self):
        sys = ParamSystem(2, lambda xi: np.array([[2.0, 1.0 + xi], [0.0, 3.0]]),
                          lambda xi: np.ones(2))
        sol = solve_stochastic_galerkin(sys, build_basis(SPACE, 2), gauss_rule(SPACE, 10))
        assert np.all(np.isfinite(sol.coeffs))


class TestPseudoSpectral:
    def test_lognormal_inverse_coefficients(self):
        a = 0.3
        sys = scalar_toy(lambda xi: math.exp(a * xi), lambda xi: 1.0)
        sol = solve_pseudospectral(sys, build_basis(SPACE, 8), gauss_rule(SPACE, 40))
        closed = [math.exp(a * a / 2) * (-a) ** n / math.sqrt(math.factorial(n))
                  for n in range(9)]
        np.testing.assert_allclose(sol.coeffs, closed, rtol=1e-10, atol=1e-13 * closed[0])

    def test_equals_inverse_lspg(self, spd_toy):
        basis = build_basis(SPACE, 5)
        rule = gauss_rule(SPACE, 25)
        ps = solve_pseudospectral(spd_toy, basis, rule)
        ls = solve_weighted_lspg(spd_toy, basis, rule, WeightingScheme.inverse())
        assert rel(ls.coeffs, ps.coeffs) < 1e-8

    def test_singular_node(self):
        sys = ParamSystem(1, lambda xi: np.array([[round(xi, 8)]]), lambda xi: np.array([1.0]))
        with pytest.raises(FactorizationError):
            solve_pseudospectral(sys, build_basis(SPACE, 1), gauss_rule(SPACE, 5))


class TestPetrovGalerkin:
    @pytest.mark.parametrize("scheme", SCHEMES, ids=["energy", "identity", "inverse"])
    def test_residual_orthogonal_to_test_space(self, spd_toy, scheme):
        basis = build_basis(SPACE, 4)
        rule = gauss_rule(SPACE, 20)
        sol = solve_weighted_lspg(spd_toy, basis, rule, scheme)
        r, scale = petrov_galerkin_residual(spd_toy, sol, rule, scheme)
        assert np.linalg.norm(r) <= 1e-10 * scale


class TestAnalyticAssembly:
    def test_constant_operator_sg(self):
        A0 = np.array([[2.0, 1.0], [1.0, 3.0]])
        sys = ParamSystem(2, lambda xi: A0, lambda xi: np.ones(2), spd=True)
        basis = build_basis(SPACE, 3)
        exp = expand_operator(sys, basis, gauss_rule(SPACE, 20))
        system = assemble_analytic_sg(exp, analytic_tensors(basis, exp, 3), basis)
        np.testing.assert_allclose(system.matrix, np.kron(np.eye(4), A0), atol=1e-13)
        assert not system.warnings

    def test_constant_operator_ata(self):
        A0 = np.array([[2.0, 1.0], [0.0, 3.0]])
        sys = ParamSystem(2, lambda xi: A0, lambda xi: np.ones(2))
        basis = build_basis(SPACE, 2)
        exp = expand_operator(sys, basis, gauss_rule(SPACE, 20))
        ne = assemble_analytic_lspg_ata(exp, analytic_tensors(basis, exp, 4), basis)
        np.testing.assert_allclose(ne.T1, np.kron(np.eye(3), A0.T @ A0), atol=1e-12)
        assert ne.n_terms == exp.n_a**2

    def test_sg_matches_quadrature(self, diffusion1, rule30):
        basis = build_basis(SPACE, 3)
        K, rhs = galerkin_system(diffusion1.system, basis, rule30)
        exp = expand_operator(diffusion1.system, basis, rule30)
        system = assemble_analytic_sg(exp, analytic_tensors(basis, exp, 3), basis)
        assert np.linalg.norm(system.matrix - K) <= 1e-10 * np.linalg.norm(K)
        assert np.linalg.norm(system.rhs - rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_sparsity_follows_triple_products(self, diffusion1, rule30):
        # with A expanded to degree 1 only, blocks (i, j) with |i - j| > 1 vanish
        basis = build_basis(SPACE, 4)
        exp = expand_operator(diffusion1.system, basis, rule30, n_a=2, n_b=1)
        system = assemble_analytic_sg(exp, analytic_tensors(basis, exp, 3), basis)
        n_x = diffusion1.system.n_x
        blocks = system.matrix.reshape(5, n_x, 5, n_x)
        tol = 1e-12 * np.abs(system.matrix).max()  # quadrature zeros are roundoff-sized
        for i in range(5):
            for j in range(5):
                nz = np.abs(blocks[i, :, j, :]).max() > tol
                assert nz == (abs(i - j) <= 1)

    def test_truncation_warning(self, diffusion1, rule30):
        basis = build_basis(SPACE, 2)
        exp = expand_operator(diffusion1.system, basis, rule30)
        sol = solve_analytic_sg(exp, analytic_tensors(basis, exp, 3), basis)
        assert any("truncated" in w for w in sol.warnings)

    def test_tensors_must_cover_expansion(self, spd_toy):
        basis = build_basis(SPACE, 2)
        exp = expand_operator(spd_toy, basis, gauss_rule(SPACE, 20))
        from stochlspg.gpc import moment_tensors
        short = moment_tensors(basis, 3, gauss_rule(SPACE, 10))
        with pytest.raises(ValueError):
            assemble_analytic_sg(exp, short, basis)


@settings(max_examples=15, deadline=None)
@given(p=st.integers(0, 5), seed=st.integers(0, 1000))
def test_equivalences_random_spd(p, seed):
    """SG equals energy LSPG and PS equals inverse LSPG for random SPD families."""
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((3, 3))
    B0 = Q @ Q.T + 3 * np.eye(3)
    B1 = rng.standard_normal((3, 3))
    B1 = 0.2 * (B1 + B1.T)
    f0, f1 = rng.standard_normal(3), rng.standard_normal(3)
    sys = ParamSystem(3, lambda xi: B0 + np.tanh(xi) * B1, lambda xi: f0 + np.cos(xi) * f1,
                      spd=True)
    basis = build_basis(SPACE, p)
    rule = gauss_rule(SPACE, 2 * p + 12)
    sg = solve_stochastic_galerkin(sys, basis, rule).coeffs
    ps = solve_pseudospectral(sys, basis, rule).coeffs
    en = solve_weighted_lspg(sys, basis, rule, WeightingScheme.energy()).coeffs
    inv = solve_weighted_lspg(sys, basis, rule, WeightingScheme.inverse()).coeffs
    assert rel(en, sg) < 1e-8
    assert rel(inv, ps) < 1e-8
