import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from oscstrip.errors import ModalReductionError, QuadratureError, UnclassifiableRegimeError
from oscstrip.forms import (
    BoundaryConditionSpec,
    CoefficientField,
    EtaLaw,
    _expansion,
    assemble_homogenized_modal,
    assemble_perturbed,
    coefficient_preset,
    effective_robin_coefficient,
    export_triplets,
    regime_classify,
    robin_preset,
    stiffness_matrix,
)
from oscstrip.geometry import MeshedStrip, StripSpec, _structured, build_mesh, make_profile
from oscstrip.oracle import analytic_example
from oscstrip.solve import solve_system

LAP = coefficient_preset("laplacian")


def unit_square_mesh():
    x1 = np.array([0.0, 1.0])
    Z = np.array([[0.0, 1.0], [0.0, 1.0]])
    return MeshedStrip(
        **_structured(x1, Z), width=1.0, strip=StripSpec(1.0, 1.0, 0.0, 1.0), profile=make_profile("constant", (0.0,))
    )


def test_two_triangle_hand_assembly():
    mesh = unit_square_mesh()
    # nodes: 0 (0,0), 1 (0,1), 2 (1,0), 3 (1,1); split along 0-3
    K_hand = np.array(
        [
            [1.0, -0.5, -0.5, 0.0],
            [-0.5, 1.0, 0.0, -0.5],
            [-0.5, 0.0, 1.0, -0.5],
            [0.0, -0.5, -0.5, 1.0],
        ]
    )
    assert np.allclose(stiffness_matrix(mesh).toarray(), K_hand, atol=1e-15)
    local_mass = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    M_hand = np.zeros((4, 4))
    for t in ((0, 2, 3), (0, 3, 1)):
        M_hand[np.ix_(t, t)] += local_mass
    sys_n = assemble_perturbed(mesh, LAP, BoundaryConditionSpec.neumann())
    _, P = _expansion(mesh, mesh.top_nodes, 1.0)
    P = P.toarray()
    expected = P.conj().T @ (K_hand - 1j * M_hand) @ P
    assert np.allclose(sys_n.matrix.toarray(), expected, atol=1e-15)
    assert np.allclose(sys_n.mass.toarray(), P.conj().T @ M_hand @ P, atol=1e-15)


def flat_mesh(n=8):
    return build_mesh(make_profile("constant", (0.0,)), StripSpec(1.0, 1.0, 0.0, 1.0), n, n, grading=1.0)


def test_zero_forcing_gives_zero_rhs():
    sys = assemble_perturbed(flat_mesh(), LAP, BoundaryConditionSpec.dirichlet(), lambda x1, x2: 0.0 * x1)
    assert np.all(sys.rhs == 0)
    assert np.all(solve_system(sys).values == 0)


def test_robin_boundary_term_matches_edgewise_mass():
    mesh = flat_mesh()
    robin = assemble_perturbed(mesh, LAP, BoundaryConditionSpec.robin(1.0))
    neu = assemble_perturbed(mesh, LAP, BoundaryConditionSpec.neumann())
    R = np.zeros((mesh.n_nodes, mesh.n_nodes))
    for (i, j) in mesh.bottom_edges:
        h = np.linalg.norm(mesh.nodes[j] - mesh.nodes[i])
        R[np.ix_((i, j), (i, j))] += h / 6 * np.array([[2, 1], [1, 2]])
    P = robin.expansion.toarray()
    diff = (robin.matrix - neu.matrix).toarray()
    assert np.allclose(diff, P.conj().T @ R @ P, atol=1e-14)


def test_robin_with_zero_coefficient_is_neumann_bitwise():
    mesh = build_mesh(make_profile("cosine", (1.0,)), StripSpec(1.0, 0.25, 0.1, 1.0), 16, 16)
    f = lambda x1, x2: np.sin(np.pi * x2) * np.exp(2j * np.pi * x1)  # noqa: E731
    r = assemble_perturbed(mesh, LAP, BoundaryConditionSpec.robin(0.0), f)
    n = assemble_perturbed(mesh, LAP, BoundaryConditionSpec.neumann(), f)
    assert np.array_equal(r.matrix.toarray(), n.matrix.toarray())
    assert np.array_equal(r.rhs, n.rhs)


def test_matrix_splits_into_hermitian_stiffness_and_spd_mass():
    mesh = build_mesh(make_profile("cosine", (1.0,)), StripSpec(1.0, 0.25, 0.25, 1.0), 8, 8, cell_periods=1)
    sys = assemble_perturbed(mesh, LAP, BoundaryConditionSpec.robin(2.0), bloch_phase=np.exp(0.7j))
    A = sys.matrix.toarray()
    S = (A + A.conj().T) / 2
    M = (A.conj().T - A) / 2j
    assert np.allclose(M, sys.mass.toarray(), atol=1e-14)
    assert np.allclose(S, S.conj().T)
    assert np.linalg.eigvalsh(M).min() > 0
    assert np.linalg.eigvalsh(S).min() > -1e-12
    rng = np.random.default_rng(1)
    u = rng.normal(size=A.shape[0]) + 1j * rng.normal(size=A.shape[0])
    assert np.imag(np.vdot(u, A @ u)) == pytest.approx(-np.real(np.vdot(u, M @ u)), rel=1e-12)
    assert sys.n_free == A.shape[0]


def test_variable_coefficients_and_checks():
    coeffs = coefficient_preset("variable_demo")
    coeffs.check()
    assert coeffs.is_real_symmetric
    bad = CoefficientField(A12=lambda x1, x2: 0.3 + 0 * x1, A21=lambda x1, x2: -0.3 + 0 * x1)
    with pytest.raises(ValueError):
        bad.check()
    weak = CoefficientField(A11=lambda x1, x2: 0.5 + 0 * x1, c0=1.0)
    with pytest.raises(ValueError):
        weak.check()


def test_nan_coefficient_raises_quadrature_error():
    coeffs = CoefficientField(A0=lambda x1, x2: np.where(x2 > 0.5, np.nan, 0.0))
    with pytest.raises(QuadratureError):
        assemble_perturbed(flat_mesh(), coeffs, BoundaryConditionSpec.dirichlet())


def test_effective_factor_against_quad():
    prof = make_profile("cosine", (1.0,))
    eff = effective_robin_coefficient(1.0, prof, 1.0)
    exact, _ = integrate.quad(lambda t: np.sqrt(1 + prof.derivative(t) ** 2), 0, 1, epsabs=1e-13, epsrel=1e-13, limit=200)
    assert abs(eff.factor - exact) < 1e-10
    assert effective_robin_coefficient(1.0, prof, 0.0).factor == 1.0
    assert effective_robin_coefficient(1.0, make_profile("constant", (2.0,)), 3.0).factor == 1.0


@settings(max_examples=20, deadline=None)
@given(a1=st.floats(0.0, 3.0), a2=st.floats(0.0, 3.0), c=st.floats(0.1, 2.0))
def test_effective_factor_monotone_in_alpha(a1, a2, c):
    prof = make_profile("cosine", (c,))
    lo, hi = sorted((a1, a2))
    f_lo = effective_robin_coefficient(1.0, prof, lo).factor
    f_hi = effective_robin_coefficient(1.0, prof, hi).factor
    assert 1.0 <= f_lo <= f_hi + 1e-15


def test_effective_coefficient_scales_variable_a():
    prof = make_profile("cosine", (1.0,))
    a = robin_preset("degenerate_quadratic", 2.0, 0.5)
    eff = effective_robin_coefficient(a, prof, 1.0)
    x = np.linspace(0, 1, 11)
    assert np.allclose(eff(x), a(x, 0 * x) * eff.factor)


def test_robin_presets():
    a = robin_preset("degenerate_quadratic", 3.0, 0.125)
    x = np.array([0.0, 0.125, 0.25, 0.0625])
    assert np.allclose(a(x, 0 * x), [0, 0, 0, 3.0], atol=1e-14)
    assert np.all(robin_preset("constant", 2.0)(x, x) == 2.0)
    with pytest.raises(KeyError):
        robin_preset("nope")


def modal_error(n, bc0, exact, g, breakpoints=()):
    sys = assemble_homogenized_modal(0, LAP, bc0, n, g=g, breakpoints=breakpoints)
    sol = solve_system(sys)
    return np.max(np.abs(sol.values - exact(sys.nodes_1d)))


def test_modal_dirichlet_closed_form_second_order():
    k = np.exp(1j * np.pi / 4)

    def exact(x):
        return 1 - np.cos(k * (x - 0.5)) / np.cos(k * 0.5)

    g = lambda x: -1j * np.ones_like(x)  # noqa: E731
    e1 = modal_error(256, BoundaryConditionSpec.dirichlet(), exact, g)
    e2 = modal_error(512, BoundaryConditionSpec.dirichlet(), exact, g)
    assert e2 < 1e-5
    assert e1 / e2 == pytest.approx(4.0, rel=0.1)


def test_modal_robin_matches_analytic_example():
    ex = analytic_example(0.2, 1.3)
    err = modal_error(4096, BoundaryConditionSpec.robin(1.3), ex.U, lambda x: -1j * ex.F(x), (0.2,))
    assert err < 1e-6


def test_modal_zero_robin_equals_neumann():
    g = lambda x: np.sin(np.pi * x)  # noqa: E731
    r = solve_system(assemble_homogenized_modal(1, LAP, BoundaryConditionSpec.robin(0.0), 512, L=2.0, g=g))
    n = solve_system(assemble_homogenized_modal(1, LAP, BoundaryConditionSpec.neumann(), 512, L=2.0, g=g))
    assert np.max(np.abs(r.values - n.values)) < 1e-12


def test_modal_reduction_rejects_x1_dependence():
    coeffs = CoefficientField(A22=lambda x1, x2: 1 + 0.5 * np.sin(2 * np.pi * x1))
    with pytest.raises(ModalReductionError):
        assemble_homogenized_modal(0, coeffs, BoundaryConditionSpec.dirichlet(), 64)
    bc = BoundaryConditionSpec.robin(robin_preset("degenerate_quadratic", 1.0, 0.5))
    with pytest.raises(ModalReductionError):
        assemble_homogenized_modal(0, LAP, bc, 64)


def test_regime_classification():
    eps = 2.0 ** -np.arange(3, 8)
    assert regime_classify(eps, EtaLaw(1.0, 0.5)).alpha == 0.5
    assert regime_classify(eps, EtaLaw(2.0)).alpha == 0.0
    assert regime_classify(eps, EtaLaw(2 / 3)).kind == "high"
    assert regime_classify(eps, eps).alpha == pytest.approx(1.0)
    assert regime_classify(eps, eps**2).alpha == 0.0
    assert regime_classify(eps, eps ** (2 / 3)).kind == "high"
    with pytest.raises(UnclassifiableRegimeError):
        regime_classify(eps, [0.1, 0.001, 0.2, 0.0001, 0.3])
    with pytest.raises(UnclassifiableRegimeError):
        regime_classify(eps[:2], eps[:2])


def test_export_triplets():
    sys = assemble_perturbed(flat_mesh(), LAP, BoundaryConditionSpec.dirichlet())
    lines = export_triplets(sys).splitlines()
    assert lines[0] == "# row col re im"
    assert len(lines) - 1 == sys.matrix.nnz
    r, c, re, im = lines[1].split()
    assert complex(float(re), float(im)) == sys.matrix[int(r), int(c)]


def test_dirichlet_expansion_leaves_boundaries_empty():
    mesh = flat_mesh()
    sys = assemble_perturbed(mesh, LAP, BoundaryConditionSpec.dirichlet())
    P = sp.csr_matrix(sys.expansion)
    assert P[mesh.bottom_nodes].nnz == 0
    assert P[mesh.top_nodes].nnz == 0
