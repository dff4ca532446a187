"""Linear solves, field evaluation and H1 error measurement."""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicHermiteSpline

from .errors import ModeMismatchError, NonConvergenceError, OutOfDomainError, SingularSystemError
from .forms import AssembledSystem, BoundaryConditionSpec, CoefficientField, assemble_homogenized_modal
from .geometry import MeshedStrip

# 7-point degree-5 rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD7_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
QUAD7_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


@dataclass(eq=False)
class SolutionField:
    """Nodal values on the full node set (Dirichlet nodes carry 0)."""

    values: np.ndarray
    mesh: MeshedStrip | None = None
    nodes_1d: np.ndarray | None = None
    reduced: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def export(self) -> str:
        """Node table ``x1 x2 re(u) im(u)``."""
        buf = io.StringIO()
        buf.write("# x1 x2 re im\n")
        for (x, y), v in zip(self.mesh.nodes, self.values):
            buf.write(f"{x:.17g} {y:.17g} {v.real:.17g} {v.imag:.17g}\n")
        return buf.getvalue()


def solve_system(system: AssembledSystem, tol: float = 1e-8, max_refine: int = 3) -> SolutionField:
    """Sparse LU solve with iterative refinement.

    The relative residual ``||A u - f|| / ||f||`` reached is stored in
    ``metadata["residual"]``; a solve that cannot reach ``tol`` raises
    :class:`NonConvergenceError`.
    """
    if not 0 < tol <= 1e-6:
        raise ValueError("tol must lie in (0, 1e-6]")
    A, f = system.matrix, system.rhs
    meta = dict(system.metadata, shift=system.shift)
    fnorm = np.linalg.norm(f)
    if fnorm == 0:
        x = np.zeros(A.shape[0], dtype=complex)
        meta["residual"] = 0.0
    else:
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        x = lu.solve(f)
        res = np.linalg.norm(f - A @ x) / fnorm
        for _ in range(max_refine):
            if res <= tol:
                break
            x = x + lu.solve(f - A @ x)
            res = np.linalg.norm(f - A @ x) / fnorm
        if not np.isfinite(res) or res > tol:
            raise NonConvergenceError("sparse LU did not reach the requested tolerance", res)
        meta["residual"] = float(res)
    return SolutionField(
        values=system.expansion @ x,
        mesh=system.mesh,
        nodes_1d=system.nodes_1d,
        reduced=x,
        metadata=meta,
    )


def locate(mesh: MeshedStrip, points, tol: float = 1e-12):
    """Containing triangle and barycentric coordinates for each point.

    Column lookup is index arithmetic on the uniform x1 lattice; the row is
    found by counting the interpolated row heights below the point.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dx = mesh.width / mesh.n1
    x1, x2 = pts[:, 0], pts[:, 1]
    outside = (x1 < -tol) | (x1 > mesh.width + tol)
    i = np.clip(np.floor(x1 / dx).astype(np.int64), 0, mesh.n1 - 1)
    xi = np.clip((x1 - i * dx) / dx, 0.0, 1.0)
    Z = mesh.heights
    z = (1 - xi)[:, None] * Z[i] + xi[:, None] * Z[i + 1]
    outside |= (x2 < z[:, 0] - tol) | (x2 > z[:, -1] + tol)
    if np.any(outside):
        raise OutOfDomainError(pts[np.flatnonzero(outside)[0]])
    j = np.clip(np.sum(z <= x2[:, None], axis=1) - 1, 0, mesh.n2 - 1)
    q = i * mesh.n2 + j
    cand = np.stack([2 * q, 2 * q + 1], axis=1)
    best_t = np.empty(len(pts), dtype=np.int64)
    best_l = np.empty((len(pts), 3))
    best_m = np.full(len(pts), -np.inf)
    for c in range(2):
        t = cand[:, c]
        p = mesh.nodes[mesh.triangles[t]]
        v0 = p[:, 1] - p[:, 0]
        v1 = p[:, 2] - p[:, 0]
        r = pts - p[:, 0]
        det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (r[:, 0] * v1[:, 1] - r[:, 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * r[:, 1] - v0[:, 1] * r[:, 0]) / det
        lam = np.column_stack([1 - l1 - l2, l1, l2])
        m = lam.min(axis=1)
        take = m > best_m
        best_t[take] = t[take]
        best_l[take] = lam[take]
        best_m[take] = m[take]
    return best_t, best_l


def evaluate(sol: SolutionField, points) -> np.ndarray:
    """Piecewise-linear interpolation of a 2D field at ``points`` (shape (P, 2))."""
    t, lam = locate(sol.mesh, points)
    return np.einsum("pa,pa->p", lam, sol.values[sol.mesh.triangles[t]])


@dataclass(frozen=True)
class ModalReference:
    """Straight-strip field ``u0 = U(x2) exp(2 pi i k x1 / L)`` from a tabulated profile.

    ``interpolation="hermite"`` uses cubic Hermite pieces on the nodal values and
    derivatives; ``"linear"`` treats U as the piecewise-linear interpolant.
    """

    x2: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    mode: int
    L: float = 1.0
    interpolation: str = "hermite"

    @property
    def kappa(self) -> float:
        return 2 * np.pi * self.mode / self.L

    def U(self, x2, nu: int = 0):
        x2 = np.asarray(x2, dtype=float)
        if self.interpolation == "linear":
            if nu == 0:
                return np.interp(x2, self.x2, self.values.real) + 1j * np.interp(x2, self.x2, self.values.imag)
            k = np.clip(np.searchsorted(self.x2, x2, side="right") - 1, 0, self.x2.size - 2)
            return (self.values[k + 1] - self.values[k]) / (self.x2[k + 1] - self.x2[k])
        return self._spline(x2, nu)

    def __post_init__(self):
        if self.interpolation == "hermite":
            object.__setattr__(self, "_hermite", CubicHermiteSpline(self.x2, self.values, self.derivatives))

    def _spline(self, x2, nu):
        return self._hermite(x2, nu)

    def __call__(self, x1, x2):
        return self.U(x2) * np.exp(1j * self.kappa * np.asarray(x1))

    def gradient(self, x1, x2):
        ph = np.exp(1j * self.kappa * np.asarray(x1))
        return 1j * self.kappa * self.U(x2) * ph, self.U(x2, 1) * ph


def modal_reference(
    mode: int,
    coeffs: CoefficientField,
    bc0: BoundaryConditionSpec,
    g,
    n: int = 2**16,
    d: float = 1.0,
    L: float = 1.0,
    breakpoints=(),
    tol: float = 1e-6,
) -> ModalReference:
    """Solve the 1D modal problem and wrap it as a :class:`ModalReference`."""
    system = assemble_homogenized_modal(mode, coeffs, bc0, n, d=d, L=L, g=g, breakpoints=breakpoints)
    sol = solve_system(system, tol=tol)
    x = system.nodes_1d
    U = sol.values
    dU = np.gradient(U, x, edge_order=2)
    return ModalReference(x, U, dU, mode, L)


@dataclass
class ErrorBreakdown:
    l2: float
    h1_semi: float
    h1: float
    bottom_layer_l2: float
    residual: float | None = None
    h_max: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def error_h1_on_perturbed(u_eps: SolutionField, reference: ModalReference, layer_height: float | None = None) -> ErrorBreakdown:
    """H1(Omega_eps) distance between a perturbed solution and a straight-strip reference.

    Integrates with a 7-point degree-5 rule on every triangle; the reference is
    evaluated at the physical quadrature points and its gradient uses
    ``d/dx1 -> i kappa``. Norms are reported per macro period ``L`` even when
    the mesh covers a single Bloch cell. The bottom-layer norm covers
    ``x2 < layer_height``, by default ``(b_max + 1) * eta``.
    """
    mode = u_eps.metadata.get("mode")
    if mode is not None and mode != reference.mode:
        raise ModeMismatchError(f"solution mode {mode} differs from reference mode {reference.mode}")
    mesh = u_eps.mesh
    p = mesh.nodes[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    G = np.stack([-g1 - g2, g1, g2], axis=1)
    ut = u_eps.values[mesh.triangles]
    grad_h = np.einsum("ta,tad->td", ut, G)
    X = np.einsum("qa,tad->tqd", QUAD7_BARY, p)
    uh = np.einsum("qa,ta->tq", QUAD7_BARY, ut)
    x1, x2 = X[..., 0], X[..., 1]
    u0 = reference(x1, x2)
    g0x, g0y = reference.gradient(x1, x2)
    w = area[:, None] * QUAD7_W[None, :]
    diff2 = np.abs(uh - u0) ** 2
    grad2 = np.abs(grad_h[:, None, 0] - g0x) ** 2 + np.abs(grad_h[:, None, 1] - g0y) ** 2
    if layer_height is None:
        layer_height = (mesh.profile.b_max + 1) * mesh.strip.eta
    scale = mesh.strip.L / mesh.width
    l2 = np.sqrt(scale * np.sum(w * diff2))
    semi = np.sqrt(scale * np.sum(w * grad2))
    layer = np.sqrt(scale * np.sum(w * diff2 * (x2 < layer_height)))
    return ErrorBreakdown(
        l2=float(l2),
        h1_semi=float(semi),
        h1=float(np.hypot(l2, semi)),
        bottom_layer_l2=float(layer),
        residual=u_eps.metadata.get("residual"),
        h_max=mesh.h_max,
    )


def field_norms(sol: SolutionField) -> tuple[float, float]:
    """(L2, H1) norms of a 2D field per macro period."""
    mesh = sol.mesh
    p = mesh.nodes[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    G = np.stack([-g1 - g2, g1, g2], axis=1)
    ut = sol.values[mesh.triangles]
    grad = np.einsum("ta,tad->td", ut, G)
    uq = np.einsum("qa,ta->tq", QUAD7_BARY, ut)
    w = 0.5 * det[:, None] * QUAD7_W[None, :]
    scale = mesh.strip.L / mesh.width
    l2 = np.sqrt(scale * np.sum(w * np.abs(uq) ** 2))
    semi2 = scale * np.sum(0.5 * det * np.sum(np.abs(grad) ** 2, axis=1))
    return float(l2), float(np.sqrt(l2**2 + semi2))
