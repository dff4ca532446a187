import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from oscstrip.errors import DegenerateDomainError, MeshQualityError, NegativeProfileError, PeriodError, ProfileError
from oscstrip.geometry import (
    MeshedStrip,
    StripSpec,
    _structured,
    build_mesh,
    check_mesh,
    export_mesh,
    make_profile,
    mesh_quality,
    profile_from_samples,
    read_mesh_tables,
)


def test_constant_zero_profile():
    b = make_profile("constant", (0.0,))
    assert b.b_max == 0.0
    assert np.all(b.sample(np.linspace(0, 1, 33)) == 0.0)


def test_cosine_profile_values():
    b = make_profile("cosine", (1.0,))
    assert b.sample(0.0) == pytest.approx(0.0, abs=1e-15)
    assert b.sample(0.5) == pytest.approx(1.0, abs=1e-15)
    assert b.b_max == 1.0


def test_custom_b_max_against_brute_force():
    # (1 - cos 2 pi t) / 2 + 0.25 (1 - cos 4 pi t) / 2
    b = make_profile("smoothed_custom", (0.625, -0.5, 0.0, -0.125, 0.0))
    t = np.arange(1_000_000) / 1_000_000
    brute = (1 - np.cos(2 * np.pi * t)) / 2 + 0.25 * (1 - np.cos(4 * np.pi * t)) / 2
    assert b.b_max == pytest.approx(brute.max(), abs=1e-9)
    assert b.b_max >= brute.max() - 1e-12
    assert np.max(np.abs(b.sample(t) - brute)) < 1e-13


def test_negative_profile_rejected_and_lifted():
    with pytest.raises(NegativeProfileError):
        make_profile("smoothed_custom", (0.0, 1.0))
    lifted = make_profile("smoothed_custom", (0.0, 1.0), lift=True)
    assert lifted.b_min == pytest.approx(0.0, abs=1e-12)
    assert lifted.b_max == pytest.approx(2.0, abs=1e-12)


def test_invalid_parameters():
    with pytest.raises(ProfileError):
        make_profile("cosine", (-1.0,))
    with pytest.raises(ProfileError):
        make_profile("wiggly", (1.0,))


def test_samples_must_be_periodic():
    t = np.linspace(0, 1, 17)
    with pytest.raises(PeriodError):
        profile_from_samples(1 + t)
    prof = profile_from_samples(1 - np.cos(2 * np.pi * t))
    assert np.max(np.abs(prof.sample(t) - (1 - np.cos(2 * np.pi * t)))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(
    c=st.floats(0.05, 3.0),
    a2=st.floats(-0.2, 0.2),
    shift=st.floats(-3.0, 3.0),
)
def test_profile_invariants(c, a2, shift):
    prof = make_profile("smoothed_custom", (c + 0.5, -c / 2, 0.0, a2, 0.0), lift=True)
    t = np.linspace(0, 1, 2001)
    v = prof.sample(t)
    assert v.min() >= -1e-12
    assert np.max(np.abs(prof.sample(t + shift) - prof.sample(t + shift + 1))) < 1e-11
    assert prof.b_max >= v.max() - 1e-12
    # central differences converge at second order to the analytic derivative
    errs = []
    for h in (1e-3, 5e-4):
        fd = (prof.sample(t + h) - prof.sample(t - h)) / (2 * h)
        errs.append(np.max(np.abs(fd - prof.derivative(t))))
    if errs[0] > 1e-9:
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_shifted_profile_matches_translation():
    prof = make_profile("smoothed_custom", (1.0, -0.5, 0.2, 0.1, -0.05))
    sh = prof.shifted(0.3)
    t = np.linspace(0, 1, 101)
    assert np.max(np.abs(sh.sample(t) - prof.sample(t + 0.3))) < 1e-13


def test_strip_rejects_degenerate_domains():
    prof = make_profile("cosine", (1.0,))
    with pytest.raises(DegenerateDomainError):
        build_mesh(prof, StripSpec(d=1.0, epsilon=0.125, eta=0.6), 16, 16)
    with pytest.raises(DegenerateDomainError):
        build_mesh(prof, StripSpec(d=1.0, epsilon=0.3, eta=0.1), 16, 16)


def test_flat_mesh_is_uniform_rectangle():
    mesh = build_mesh(make_profile("constant", (0.0,)), StripSpec(1.0, 1.0, 0.125, 1.0), 16, 16, grading=1.0)
    assert np.all(mesh.nodes[mesh.bottom_nodes, 1] == 0.0)
    assert np.all(mesh.nodes[mesh.top_nodes, 1] == 1.0)
    assert mesh.area() == pytest.approx(1.0, abs=1e-13)
    assert mesh_quality(mesh).min_angle == pytest.approx(45.0, abs=1e-9)


def test_zero_amplitude_reduces_to_flat_mesh():
    strip = StripSpec(1.0, 0.125, 0.0, 1.0)
    flat = build_mesh(make_profile("constant", (0.0,)), strip, 16, 16)
    cos = build_mesh(make_profile("cosine", (1.0,)), strip, 16, 16)
    assert np.array_equal(flat.nodes, cos.nodes)
    assert np.array_equal(flat.triangles, cos.triangles)


def test_mesh_area_against_quadrature():
    prof = make_profile("cosine", (1.0,))
    strip = StripSpec(d=1.0, epsilon=0.125, eta=0.125, L=1.0)
    mesh = build_mesh(prof, strip, 16, 16)
    exact, _ = integrate.quad(lambda x: 1.0 - 0.125 * prof.sample(x / 0.125), 0, 1, limit=200, epsabs=1e-14)
    assert abs(mesh.area() - exact) < 1e-10


def test_boundary_nodes_and_periodic_pairs():
    prof = make_profile("smoothed_custom", (1.0, -0.6, 0.3, 0.1, 0.0))
    strip = StripSpec(d=1.0, epsilon=0.25, eta=0.1, L=1.0)
    mesh = build_mesh(prof, strip, 16, 16)
    xb = mesh.nodes[mesh.bottom_nodes]
    assert np.max(np.abs(xb[:, 1] - 0.1 * prof.sample(xb[:, 0] / 0.25))) < 1e-12
    assert np.all(mesh.nodes[mesh.top_nodes, 1] == 1.0)
    left, right = mesh.periodic_pairs.T
    assert np.array_equal(mesh.nodes[left, 1], mesh.nodes[right, 1])
    assert np.allclose(mesh.nodes[right, 0] - mesh.nodes[left, 0], mesh.width)
    assert len(set(left)) == len(left) == len(set(right))
    assert np.all(mesh.signed_areas() > 0)


def test_refinement_nests_nodes():
    prof = make_profile("cosine", (1.0,))
    strip = StripSpec(1.0, 0.125, 0.125, 1.0)
    coarse = build_mesh(prof, strip, 16, 16, grading=2.0)
    fine = build_mesh(prof, strip, 32, 32, grading=2.0)
    fine_set = {tuple(np.round(p, 12)) for p in fine.nodes}
    assert all(tuple(np.round(p, 12)) in fine_set for p in coarse.nodes)


def test_translation_equivariance():
    prof = make_profile("smoothed_custom", (1.0, -0.5, 0.2))
    strip = StripSpec(1.0, 0.125, 0.125, 1.0)
    n = 16
    base = build_mesh(prof, strip, n, 16)
    moved = build_mesh(prof.shifted(0.5), strip, n, 16)
    hb = base.heights[:-1, 0]
    hm = moved.heights[:-1, 0]
    assert np.max(np.abs(hm - np.roll(hb, -n // 2))) < 1e-13


def test_min_angle_independent_recomputation():
    mesh = build_mesh(make_profile("cosine", (1.0,)), StripSpec(1.0, 0.125, 0.125, 1.0), 16, 16, grading=1.0)
    p = mesh.nodes[mesh.triangles]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    angles = np.degrees(
        np.stack(
            [
                np.arccos(np.clip((b**2 + c**2 - a**2) / (2 * b * c), -1, 1)),
                np.arccos(np.clip((a**2 + c**2 - b**2) / (2 * a * c), -1, 1)),
                np.arccos(np.clip((a**2 + b**2 - c**2) / (2 * a * b), -1, 1)),
            ]
        )
    )
    q = mesh_quality(mesh)
    assert q.min_angle == pytest.approx(angles.min(), abs=1e-6)
    assert q.min_angle > 1.0
    assert q.n_elements == 2 * 128 * 16


def test_inverted_triangle_detected():
    mesh = build_mesh(make_profile("constant", (0.0,)), StripSpec(1.0, 0.5, 0.0, 1.0), 8, 8)
    tri = mesh.triangles.copy()
    tri[5] = tri[5][::-1]
    with pytest.raises(MeshQualityError):
        MeshedStrip(**{**mesh.__dict__, "triangles": tri})
    object.__setattr__(mesh, "triangles", tri)
    with pytest.raises(MeshQualityError):
        check_mesh(mesh)


def test_steep_graded_mesh_fails_quality():
    prof = make_profile("cosine", (1.0,))
    with pytest.raises(MeshQualityError):
        build_mesh(prof, StripSpec(1.0, 1 / 64, 0.25, 1.0), 8, 64, grading=3.0, cell_periods=1)


def test_cell_periods_must_divide():
    prof = make_profile("cosine", (1.0,))
    with pytest.raises(DegenerateDomainError):
        build_mesh(prof, StripSpec(1.0, 0.125, 0.125, 1.0), 16, 16, cell_periods=3)
    cell = build_mesh(prof, StripSpec(1.0, 0.125, 0.125, 1.0), 16, 16, cell_periods=2)
    assert cell.width == pytest.approx(0.25)


def test_export_round_trip():
    mesh = build_mesh(make_profile("cosine", (1.0,)), StripSpec(1.0, 0.5, 0.2, 1.0), 8, 8)
    text = export_mesh(mesh)
    assert text.startswith("# nodes")
    tables = read_mesh_tables(text)
    assert np.array_equal(tables["nodes"], mesh.nodes)
    assert np.array_equal(tables["triangles"], mesh.triangles)
    assert np.array_equal(tables["bottom_edges"], mesh.bottom_edges)
    assert np.array_equal(tables["bottom_edge_lengths"], mesh.bottom_edge_lengths)


def test_structured_split_prefers_shorter_diagonal():
    x1 = np.array([0.0, 1.0])
    Z = np.array([[0.0, 1.0], [0.9, 1.0]])
    data = _structured(x1, Z)
    # (0, 1)-(1, 0.9) is much shorter than (0, 0)-(1, 1)
    assert bool(data["diagonals"][0, 0])
    flat = _structured(x1, np.array([[0.0, 1.0], [0.0, 1.0]]))
    assert not bool(flat["diagonals"][0, 0])


def test_area_converges_at_least_second_order():
    # a profile with many Fourier modes so the polyline area is not exact on coarse grids
    t = np.linspace(0, 1, 65)
    prof = profile_from_samples(1.0 + np.exp(-40 * (t - 0.5) ** 2) - np.exp(-10.0))
    strip = StripSpec(d=1.0, epsilon=0.25, eta=0.25, L=1.0)
    exact, _ = integrate.quad(lambda x: 1.0 - 0.25 * prof.sample(x / 0.25), 0, 1, limit=400, epsabs=1e-14)
    errs = [abs(build_mesh(prof, strip, n, 8).area() - exact) for n in (8, 16, 32)]
    for coarse, fine in zip(errs[:-1], errs[1:]):
        assert fine <= coarse / 3.5 or fine < 1e-13
