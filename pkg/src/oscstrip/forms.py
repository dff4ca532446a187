"""Coefficient data and assembly of the shifted sesquilinear forms.

All systems discretize ``h(u, v) + shift * (u, v) = (f, v)`` with
piecewise-linear elements; the default shift ``-1j`` gives the resolvent
``(H - i)^{-1}``. Matrix entries follow the test-row convention
``A[i, j] = h(phi_j, phi_i) + shift * (phi_j, phi_i)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ModalReductionError, QuadratureError, UnclassifiableRegimeError
from .geometry import BoundaryProfile, MeshedStrip

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Strang's 3-point rule (degree 2) in barycentric coordinates
_TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_TRI_W = np.full(3, 1 / 3)
_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
_GAUSS3_X, _GAUSS3_W = np.polynomial.legendre.leggauss(3)


def constant(value) -> Field:
    """Coefficient function returning ``value`` everywhere."""

    def fn(x1, x2):
        return np.full(np.broadcast(np.asarray(x1), np.asarray(x2)).shape, value)

    fn.constant_value = value
    return fn


@dataclass(frozen=True)
class CoefficientField:
    """Operator coefficients; ``None`` first-order terms mean zero."""

    A11: Field = field(default_factory=lambda: constant(1.0))
    A12: Field = field(default_factory=lambda: constant(0.0))
    A21: Field = field(default_factory=lambda: constant(0.0))
    A22: Field = field(default_factory=lambda: constant(1.0))
    A1: Field | None = None
    A2: Field | None = None
    A0: Field = field(default_factory=lambda: constant(0.0))
    a: Field | None = None
    c0: float = 1.0
    name: str = "custom"

    def check(self, d: float = 1.0, n: int = 100, seed: int = 0) -> None:
        """Verify Hermitian symmetry, ellipticity and reality on random samples."""
        rng = np.random.default_rng(seed)
        x1 = rng.uniform(0, 1, n)
        x2 = rng.uniform(0, d, n)
        A = np.array([[self.A11(x1, x2), self.A12(x1, x2)], [self.A21(x1, x2), self.A22(x1, x2)]])
        if np.max(np.abs(A[0, 1] - np.conj(A[1, 0]))) > 1e-12 or np.max(np.abs(A.imag[[0, 1], [0, 1]])) > 1e-12:
            raise ValueError("A_ij is not Hermitian")
        z = rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n))
        form = np.einsum("ijk,jk,ik->k", A, z, np.conj(z)).real
        if np.any(form < self.c0 * np.sum(np.abs(z) ** 2, axis=0) * (1 - 1e-12)):
            raise ValueError("ellipticity constant c0 is violated")
        if np.any(np.iscomplex(self.A0(x1, x2))):
            raise ValueError("A0 must be real")
        if self.a is not None and np.any(np.iscomplex(self.a(x1, x2 * 0.1))):
            raise ValueError("Robin coefficient must be real")

    @property
    def is_real_symmetric(self) -> bool:
        return self.A1 is None and self.A2 is None

    def x1_independent(self, d: float = 1.0, n: int = 16) -> bool:
        x2 = np.linspace(0, d, n)
        for fn in (self.A11, self.A12, self.A21, self.A22, self.A1, self.A2, self.A0):
            if fn is None:
                continue
            ref = fn(np.zeros_like(x2), x2)
            for x1 in (0.137, 0.5, 0.911):
                if np.max(np.abs(fn(np.full_like(x2, x1), x2) - ref)) > 1e-14:
                    return False
        return True


def coefficient_preset(name: str) -> CoefficientField:
    if name == "laplacian":
        return CoefficientField(name="laplacian")
    if name == "variable_demo":
        return CoefficientField(
            A22=lambda x1, x2: 1.0 + 0.5 * np.sin(np.pi * np.asarray(x2)) ** 2 + 0.0 * np.asarray(x1),
            name="variable_demo",
        )
    raise KeyError(f"unknown coefficient preset {name!r}")


def robin_preset(name: str, value: float = 1.0, L: float = 1.0) -> Field:
    """Robin coefficient presets.

    ``constant``: ``a = value``. ``degenerate_quadratic``:
    ``a = value * sin^2(pi x1 / L)``, vanishing quadratically at ``x1 = n L``.
    """
    if name == "constant":
        return constant(float(value))
    if name == "degenerate_quadratic":

        def fn(x1, x2):
            x1 = np.asarray(x1, dtype=float)
            return value * np.sin(np.pi * x1 / L) ** 2 + 0.0 * np.asarray(x2)

        fn.zero_spacing = L
        fn.vanishing_order = 2
        return fn
    raise KeyError(f"unknown Robin preset {name!r}")


@dataclass(frozen=True)
class BoundaryConditionSpec:
    """Condition on the lower boundary; the top is always Dirichlet."""

    kind: str
    robin_coefficient: Field | float | None = None

    def __post_init__(self):
        if self.kind not in ("Dirichlet", "Neumann", "Robin"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")

    @classmethod
    def dirichlet(cls):
        return cls("Dirichlet")

    @classmethod
    def neumann(cls):
        return cls("Neumann")

    @classmethod
    def robin(cls, a):
        return cls("Robin", a)

    def boundary_coefficient(self, coeffs: CoefficientField | None = None) -> Field | None:
        """The Robin coefficient to integrate on the bottom, zero for Neumann."""
        if self.kind == "Dirichlet":
            return None
        if self.kind == "Neumann":
            return constant(0.0)
        a = self.robin_coefficient
        if a is None and coeffs is not None:
            a = coeffs.a
        if a is None:
            raise ValueError("Robin condition without a coefficient")
        return a if callable(a) else constant(float(a))


@dataclass(eq=False)
class AssembledSystem:
    """Reduced linear system over the free unknowns.

    ``expansion`` maps free unknowns to the full node vector
    (``u_full = expansion @ u``); Dirichlet rows are empty and periodic images
    carry the Bloch phase. ``mass`` is the reduced L2 Gram matrix.
    """

    matrix: sp.csc_matrix
    rhs: np.ndarray
    dof_map: np.ndarray
    expansion: sp.csr_matrix
    mass: sp.csc_matrix
    shift: complex
    mesh: MeshedStrip | None = None
    nodes_1d: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_free(self) -> int:
        return self.matrix.shape[0]


def _evaluate(fn, x1, x2, what):
    vals = np.asarray(fn(x1, x2))
    vals = np.broadcast_to(vals, np.broadcast(x1, x2).shape)
    if not np.all(np.isfinite(vals)):
        raise QuadratureError(f"non-finite {what} value at a quadrature point")
    return vals


def _expansion(mesh: MeshedStrip, dirichlet: np.ndarray, phase: complex):
    n = mesh.n_nodes
    is_dir = np.zeros(n, dtype=bool)
    is_dir[dirichlet] = True
    left, right = mesh.periodic_pairs[:, 0], mesh.periodic_pairs[:, 1]
    is_slave = np.zeros(n, dtype=bool)
    is_slave[right] = True
    master = ~is_dir & ~is_slave
    dof_map = np.full(n, -1, dtype=np.int64)
    dof_map[master] = np.arange(master.sum())
    rows = [np.flatnonzero(master)]
    cols = [dof_map[master]]
    vals = [np.ones(master.sum(), dtype=complex)]
    ok = ~is_dir[right] & ~is_dir[left]
    rows.append(right[ok])
    cols.append(dof_map[left[ok]])
    vals.append(np.full(ok.sum(), phase, dtype=complex))
    dof_map[right[ok]] = dof_map[left[ok]]
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, int(master.sum())),
    )
    return dof_map, P


def _triangle_geometry(mesh: MeshedStrip):
    p = mesh.nodes[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return p, 0.5 * det, grads


def triangle_quadrature(mesh: MeshedStrip, bary: np.ndarray = _TRI_BARY):
    """Physical quadrature points, shape (T, Q, 2), for barycentric rule points."""
    p = mesh.nodes[mesh.triangles]
    return np.einsum("qa,tad->tqd", bary, p)


def _scatter(tri: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    k = tri.shape[1]
    rows = np.repeat(tri, k, axis=1).ravel()
    cols = np.tile(tri, (1, k)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_matrix(mesh: MeshedStrip) -> sp.csr_matrix:
    """Full-node P1 Laplacian stiffness matrix (real)."""
    _, area, G = _triangle_geometry(mesh)
    K = area[:, None, None] * np.einsum("tad,tbd->tab", G, G)
    return _scatter(mesh.triangles, K, mesh.n_nodes)


def assemble_perturbed(
    mesh: MeshedStrip,
    coeffs: CoefficientField,
    bc: BoundaryConditionSpec,
    f: Field | None = None,
    shift: complex = -1j,
    bloch_phase: complex = 1.0,
) -> AssembledSystem:
    """Assemble the shifted form on the oscillating-boundary mesh.

    The bottom boundary term of the Robin form is integrated along the
    polyline edges with their true lengths. Top nodes are always eliminated,
    bottom nodes too for ``bc.kind == "Dirichlet"``. Right-column nodes are
    identified with the left column times ``bloch_phase``; use 1 when the mesh
    covers the whole macro period.
    """
    n = mesh.n_nodes
    tri = mesh.triangles
    p, area, G = _triangle_geometry(mesh)
    X = np.einsum("qa,tad->tqd", _TRI_BARY, p)
    x1, x2 = X[..., 0], X[..., 1]
    L = _TRI_BARY  # values of the three hat functions at the rule points

    A = np.empty((2, 2) + x1.shape, dtype=complex)
    A[0, 0] = _evaluate(coeffs.A11, x1, x2, "A11")
    A[0, 1] = _evaluate(coeffs.A12, x1, x2, "A12")
    A[1, 0] = _evaluate(coeffs.A21, x1, x2, "A21")
    A[1, 1] = _evaluate(coeffs.A22, x1, x2, "A22")
    Abar = np.einsum("q,pstq->tps", _TRI_W, A)
    local = area[:, None, None] * np.einsum("tps,tap,tbs->tab", Abar, G, G)
    if coeffs.A1 is not None or coeffs.A2 is not None:
        Aj = np.stack(
            [
                _evaluate(fn, x1, x2, name) if fn is not None else np.zeros_like(x1)
                for fn, name in ((coeffs.A1, "A1"), (coeffs.A2, "A2"))
            ],
            axis=-1,
        ).astype(complex)
        t1 = np.einsum("q,tqr,tbr,qa->tab", _TRI_W, Aj, G, L)
        t2 = np.einsum("q,tqr,qb,tar->tab", _TRI_W, np.conj(Aj), L, G)
        local = local + area[:, None, None] * (t1 + t2)
    a0 = _evaluate(coeffs.A0, x1, x2, "A0").astype(float)
    local = local + area[:, None, None] * np.einsum("q,tq,qa,qb->tab", _TRI_W, a0, L, L)
    mass_local = area[:, None, None] * np.einsum("q,qa,qb->ab", _TRI_W, L, L)[None]
    mass_local = np.broadcast_to(mass_local, local.shape)

    S = _scatter(tri, local, n)
    M = _scatter(tri, mass_local, n)

    dirichlet = mesh.top_nodes
    a_fn = bc.boundary_coefficient(coeffs)
    if bc.kind == "Dirichlet":
        dirichlet = np.concatenate([mesh.top_nodes, mesh.bottom_nodes])
    else:
        e = mesh.bottom_edges
        q0 = mesh.nodes[e[:, 0]]
        q1 = mesh.nodes[e[:, 1]]
        s = _GAUSS2
        Xe = q0[:, None, :] + s[None, :, None] * (q1 - q0)[:, None, :]
        av = _evaluate(a_fn, Xe[..., 0], Xe[..., 1], "Robin coefficient").astype(float)
        phi = np.stack([1 - s, s], axis=1)  # (g, a)
        R = mesh.bottom_edge_lengths[:, None, None] * np.einsum("g,eg,ga,gb->eab", [0.5, 0.5], av, phi, phi)
        S = S + _scatter(e, R, n)

    F = np.zeros(n, dtype=complex)
    if f is not None:
        fv = _evaluate(f, x1, x2, "forcing")
        Floc = area[:, None] * np.einsum("q,tq,qa->ta", _TRI_W, fv, L)
        np.add.at(F, tri.ravel(), Floc.ravel())

    dof_map, P = _expansion(mesh, dirichlet, complex(bloch_phase))
    PH = P.conj().T.tocsr()
    Sr = (PH @ S @ P).tocsc()
    Mr = (PH @ M @ P).tocsc()
    return AssembledSystem(
        matrix=(Sr + shift * Mr).tocsc(),
        rhs=PH @ F,
        dof_map=dof_map,
        expansion=P,
        mass=Mr,
        shift=shift,
        mesh=mesh,
        metadata={
            "bc": bc.kind,
            "coefficients": coeffs.name,
            "bloch_phase": complex(bloch_phase),
            "real_symmetric": coeffs.is_real_symmetric,
        },
    )


class EffectiveRobin:
    """``a_0(x1) = a(x1, 0) * factor`` with ``factor = int_0^1 sqrt(1 + alpha^2 b'(t)^2) dt``."""

    def __init__(self, a, factor: float):
        self.a = a if callable(a) else constant(float(a))
        self.factor = float(factor)

    def __call__(self, x1, x2=None):
        x1 = np.asarray(x1, dtype=float)
        return np.asarray(self.a(x1, np.zeros_like(x1)), dtype=float) * self.factor


def effective_robin_coefficient(a, profile: BoundaryProfile, alpha: float, quad_points: int = 256) -> EffectiveRobin:
    """Homogenized Robin coefficient for slowly oscillating boundaries.

    The arclength factor is integrated by composite 8-point Gauss-Legendre
    over ``quad_points // 8`` equal panels.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if quad_points < 64:
        raise ValueError("quad_points must be >= 64")
    if alpha == 0 or profile.kind == "constant":
        return EffectiveRobin(a, 1.0)
    xg, wg = np.polynomial.legendre.leggauss(8)
    panels = quad_points // 8
    left = np.arange(panels) / panels
    t = (left[:, None] + (xg[None, :] + 1) / (2 * panels)).ravel()
    w = np.tile(wg / (2 * panels), panels)
    s = alpha**2 * profile.derivative(t) ** 2
    # 1 + sum w (sqrt(1 + s) - 1), written so the factor never rounds below 1
    factor = float(1.0 + np.sum(w * s / (np.sqrt(1 + s) + 1)))
    return EffectiveRobin(a, factor)


def _subintervals(x: np.ndarray, breakpoints) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split each element at the breakpoints; return (element index, left, right)."""
    bps = np.asarray([b for b in breakpoints if x[0] < b < x[-1]], dtype=float)
    pts = np.union1d(x, bps)
    elem = np.searchsorted(x, pts[:-1], side="right") - 1
    return elem, pts[:-1], pts[1:]


def assemble_homogenized_modal(
    mode_k: int,
    coeffs: CoefficientField,
    bc0: BoundaryConditionSpec,
    n: int,
    d: float = 1.0,
    L: float = 1.0,
    g: Callable[[np.ndarray], np.ndarray] | None = None,
    breakpoints=(),
    shift: complex = -1j,
) -> AssembledSystem:
    """Fourier-mode reduction of the straight-strip problem to a 1D P1 system in x2.

    With ``u = U(x2) exp(2 pi i k x1 / L)`` the form becomes

        int A22 U' V' + (kappa^2 A11 + i kappa A1 - i kappa conj(A1) + A0 + shift) U V
            + (A2 - i kappa A12) U' V + (conj(A2) + i kappa A21) U V'

    plus ``a0 U(0) V(0)`` for a Robin condition at ``x2 = 0``. ``U(d) = 0``.
    ``breakpoints`` lists discontinuities of ``g`` so that the load vector is
    integrated piecewise-exactly.
    """
    if not coeffs.x1_independent(d):
        raise ModalReductionError("modal reduction needs coefficients independent of x1")
    kappa = 2 * np.pi * mode_k / L
    x = np.linspace(0.0, d, n + 1)
    elem, lo, hi = _subintervals(x, breakpoints)
    half = 0.5 * (hi - lo)
    xq = (0.5 * (hi + lo))[:, None] + half[:, None] * _GAUSS3_X[None, :]
    wq = half[:, None] * _GAUSS3_W[None, :]
    h = x[elem + 1] - x[elem]
    s = (xq - x[elem][:, None]) / h[:, None]
    phi = np.stack([1 - s, s], axis=-1)  # (e, q, a)
    dphi = np.stack([-1 / h, 1 / h], axis=-1)  # (e, a)
    zero = np.zeros_like(xq)

    def ev(fn):
        return np.zeros_like(xq, dtype=complex) if fn is None else _evaluate(fn, zero, xq, "coefficient").astype(complex)

    A11, A12, A21, A22 = ev(coeffs.A11), ev(coeffs.A12), ev(coeffs.A21), ev(coeffs.A22)
    A1, A2, A0 = ev(coeffs.A1), ev(coeffs.A2), ev(coeffs.A0)
    react = kappa**2 * A11 + 1j * kappa * A1 - 1j * kappa * np.conj(A1) + A0
    c_trial_d = A2 - 1j * kappa * A12  # multiplies U' V
    c_test_d = np.conj(A2) + 1j * kappa * A21  # multiplies U V'
    S_loc = (
        np.einsum("eq,eq,ea,eb->eab", wq, A22, dphi, dphi)
        + np.einsum("eq,eq,eqa,eqb->eab", wq, react, phi, phi)
        + np.einsum("eq,eq,eb,eqa->eab", wq, c_trial_d, dphi, phi)
        + np.einsum("eq,eq,eqb,ea->eab", wq, c_test_d, phi, dphi)
    )
    M_loc = np.einsum("eq,eqa,eqb->eab", wq, phi, phi)
    nodes = np.column_stack([elem, elem + 1])
    S = _scatter(nodes, S_loc, n + 1)
    M = _scatter(nodes, M_loc.astype(complex), n + 1)
    F = np.zeros(n + 1, dtype=complex)
    if g is not None:
        gv = np.asarray(g(xq), dtype=complex)
        if not np.all(np.isfinite(gv)):
            raise QuadratureError("non-finite forcing value at a quadrature point")
        np.add.at(F, nodes.ravel(), np.einsum("eq,eq,eqa->ea", wq, gv, phi).ravel())

    if bc0.kind != "Dirichlet":
        a0 = bc0.boundary_coefficient(coeffs)
        probe = np.asarray(a0(np.linspace(0, L, 17), np.zeros(17)), dtype=float)
        if np.ptp(probe) > 1e-14:
            raise ModalReductionError("modal reduction needs an x1-independent Robin coefficient")
        S = S + sp.csr_matrix(([probe[0]], ([0], [0])), shape=(n + 1, n + 1))

    free = np.arange(n + 1)[(slice(0, n) if bc0.kind != "Dirichlet" else slice(1, n))]
    dof_map = np.full(n + 1, -1, dtype=np.int64)
    dof_map[free] = np.arange(free.size)
    P = sp.csr_matrix((np.ones(free.size, dtype=complex), (free, np.arange(free.size))), shape=(n + 1, free.size))
    PH = P.T.tocsr()
    Sr = (PH @ S @ P).tocsc()
    Mr = (PH @ M @ P).tocsc()
    return AssembledSystem(
        matrix=(Sr + shift * Mr).tocsc(),
        rhs=PH @ F,
        dof_map=dof_map,
        expansion=P,
        mass=Mr,
        shift=shift,
        nodes_1d=x,
        metadata={"bc": bc0.kind, "mode": mode_k, "L": L, "d": d, "coefficients": coeffs.name},
    )


@dataclass(frozen=True)
class EtaLaw:
    """Amplitude law ``eta = c * epsilon ** theta``."""

    theta: float
    c: float = 1.0

    def __call__(self, epsilon):
        return self.c * np.asarray(epsilon, dtype=float) ** self.theta


@dataclass(frozen=True)
class Regime:
    kind: str  # "slow" or "high"
    alpha: float | None = None

    def __str__(self):
        return f"slow(alpha={self.alpha:g})" if self.kind == "slow" else "high"


def regime_classify(epsilon_series, eta_law) -> Regime:
    """Classify the oscillation regime from ``eta / epsilon`` as epsilon -> 0.

    ``eta_law`` is an :class:`EtaLaw` or a ``(theta, c)`` tuple, or a list or
    array of eta values aligned with ``epsilon_series``. For tables the trend of
    ``log(eta / epsilon)`` against ``log(epsilon)`` decides: a clear negative
    slope means the ratio blows up (high), a clear positive slope means it
    vanishes (slow, alpha = 0), a flat trend means it settles (slow, alpha =
    last ratio). Noisy or too-short tables are unclassifiable.
    """
    if isinstance(eta_law, tuple) and len(eta_law) == 2:
        eta_law = EtaLaw(*eta_law)
    if isinstance(eta_law, EtaLaw):
        if eta_law.theta < 1:
            return Regime("high")
        return Regime("slow", eta_law.c if eta_law.theta == 1 else 0.0)
    eps = np.asarray(epsilon_series, dtype=float)
    eta = np.asarray(eta_law, dtype=float)
    if eps.size != eta.size or eps.size < 3 or np.any(eps <= 0) or np.any(eta <= 0):
        raise UnclassifiableRegimeError("need at least three positive (epsilon, eta) pairs")
    order = np.argsort(-eps)
    le, lr = np.log(eps[order]), np.log(eta[order] / eps[order])
    if np.ptp(le) == 0:
        raise UnclassifiableRegimeError("all epsilon values coincide")
    slope, icpt = np.polyfit(le, lr, 1)
    resid = lr - (slope * le + icpt)
    if np.std(resid) > 0.25 * max(np.ptp(lr), 1e-3) and np.std(resid) > 1e-3:
        raise UnclassifiableRegimeError("eta / epsilon shows no consistent trend")
    if slope < -0.05:
        return Regime("high")
    if slope > 0.05:
        return Regime("slow", 0.0)
    return Regime("slow", float(np.exp(lr[-1])))


def export_triplets(system: AssembledSystem) -> str:
    """Matrix as ``row col re im`` lines (0-based, row-major order)."""
    coo = system.matrix.tocsr().tocoo()
    buf = io.StringIO()
    buf.write("# row col re im\n")
    for r, c, v in zip(coo.row, coo.col, coo.data):
        buf.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
    return buf.getvalue()
