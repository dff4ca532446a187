"""Periodic boundary-layer corrector on a truncated cell.

The corrector ``Y`` is harmonic and 1-periodic in ``xi1`` above the graph of
``b``, equals ``-b`` on the graph and tends to a constant ``ell`` as
``xi2 -> infinity``. The cell is truncated at ``xi2 = H`` with a homogeneous
Neumann condition, so ``ell`` is free and read off the top edge.

The cell mesh has two parts: a boundary-fitted band between the graph and a
flat level ``H_b >= b_max + 1``, and uniform rows of spacing ``1 / n`` above
it. ``H_b`` is aligned with ``H`` on that lattice, so cells of different
heights share the band and every row below the shorter top.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import TruncationWarning, UnderflowError
from .forms import AssembledSystem, _expansion, stiffness_matrix
from .geometry import BoundaryProfile, MeshedStrip, StripSpec, _structured
from .solve import ModalReference, solve_system

TRUNCATION_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class CellSolution:
    """Nodal corrector values on a cell mesh.

    ``decay_profile`` has one row ``(xi2, max |Y - ell|)`` per horizontal
    mesh level of the flat region above the band.
    """

    mesh: MeshedStrip
    values: np.ndarray
    ell: float
    decay_profile: np.ndarray
    band_top: float
    residual: float = 0.0

    @property
    def height(self) -> float:
        return self.mesh.strip.d

    @property
    def profile(self) -> BoundaryProfile:
        return self.mesh.profile

    @classmethod
    def from_values(cls, mesh: MeshedStrip, values, band_top: float, residual: float = 0.0) -> "CellSolution":
        """Wrap nodal values, computing ``ell`` and the decay profile."""
        values = np.asarray(values, dtype=float)
        Z = mesh.heights
        V = values.reshape(mesh.n1 + 1, mesh.n2 + 1)[:-1]  # drop the periodic image column
        ell = float(V[:, -1].mean())
        rows = np.flatnonzero(Z[0] >= band_top - 1e-12)
        prof = np.column_stack([Z[0, rows], np.abs(V[:, rows] - ell).max(axis=0)])
        return cls(mesh, values, ell, prof, band_top, residual)

    def grad_norm(self) -> float:
        return grad_norm(self.mesh, self.values)


def _band_top(profile: BoundaryProfile, H: float, n: int) -> float:
    # smallest level >= b_max + 1 lying on the 1/n lattice anchored at H
    steps = np.floor((H - profile.b_max - 1.0) * n + 1e-9)
    return H - steps / n


def build_cell_mesh(profile: BoundaryProfile, H: float = 5.0, n: int = 64) -> MeshedStrip:
    """Boundary-fitted periodic mesh of ``{0 < xi1 < 1, b(xi1) < xi2 < H}``."""
    if H < profile.b_max + 3:
        raise ValueError(f"cell height H={H} must be at least b_max + 3 = {profile.b_max + 3}")
    if n < 32:
        raise ValueError("need at least 32 nodes per unit length")
    Hb = _band_top(profile, H, n)
    n_band = int(np.ceil(Hb * n - 1e-9))
    n_up = int(round((H - Hb) * n))
    i = np.arange(n + 1)
    x1 = i / n
    B = profile.sample((i % n) / n)
    s = np.arange(n_band + 1) / n_band
    band = B[:, None] + s[None, :] * (Hb - B[:, None])
    band[:, -1] = Hb
    upper = Hb + np.arange(1, n_up + 1) / n
    upper[-1] = H
    Z = np.hstack([band, np.broadcast_to(upper, (n + 1, n_up))])
    strip = StripSpec(d=H, epsilon=1.0, eta=1.0, L=1.0)
    return MeshedStrip(**_structured(x1, Z), width=1.0, strip=strip, profile=profile)


def solve_cell_problem(profile: BoundaryProfile, H: float = 5.0, n: int = 64, tol: float = 1e-10) -> CellSolution:
    """P1 solution of the corrector problem with periodic sides and a Neumann top.

    Warns with :class:`TruncationWarning` when ``|Y - ell|`` on the top edge
    exceeds ``TRUNCATION_TOL * max |Y|``.
    """
    mesh = build_cell_mesh(profile, H, n)
    K = stiffness_matrix(mesh)
    bottom = mesh.bottom_nodes
    lift = np.zeros(mesh.n_nodes)
    lift[bottom] = -mesh.nodes[bottom, 1]
    _, P = _expansion(mesh, bottom, 1.0)
    P = P.real.tocsr()
    PT = P.T.tocsr()
    A = (PT @ K @ P).tocsc()
    rhs = -(PT @ (K @ lift))
    system = AssembledSystem(
        matrix=A.astype(complex),
        rhs=rhs.astype(complex),
        dof_map=np.zeros(0, dtype=np.int64),
        expansion=P.astype(complex),
        mass=sp.csc_matrix(A.shape),
        shift=0.0,
        mesh=mesh,
    )
    sol = solve_system(system, tol=tol)
    values = sol.values.real + lift
    cell = CellSolution.from_values(mesh, values, _band_top(profile, H, n), sol.metadata["residual"])
    scale = np.abs(values).max()
    top_dev = cell.decay_profile[-1, 1]
    if scale > 0 and top_dev > TRUNCATION_TOL * scale:
        warnings.warn(
            f"|Y - ell| = {top_dev:.2e} at the top edge exceeds {TRUNCATION_TOL:g} max|Y|; increase H",
            TruncationWarning,
            stacklevel=2,
        )
    return cell


def grad_norm(mesh: MeshedStrip, values) -> float:
    """L2 norm of the gradient of a P1 field over the mesh."""
    K = stiffness_matrix(mesh)
    v = np.asarray(values)
    return float(np.sqrt(max(np.real(np.vdot(v, K @ v)), 0.0)))


def decay_rate(cell: CellSolution, window: tuple[float, float] | None = None) -> float:
    """Exponential decay rate of ``max |Y - ell|`` across horizontal levels.

    Least-squares slope of ``log max|Y - ell|`` against ``xi2`` over levels in
    ``window``, returned with a positive sign for decay. The default window
    ``[b_max + 1, min(H - 1, b_max + 3)]`` keeps the fitted levels well above
    the roundoff floor of the cell solve.
    """
    b = cell.profile.b_max
    lo, hi = window if window is not None else (b + 1.0, min(cell.height - 1.0, b + 3.0))
    z, m = cell.decay_profile[:, 0], cell.decay_profile[:, 1]
    sel = (z >= lo - 1e-12) & (z <= hi + 1e-12)
    if sel.sum() < 5:
        raise ValueError(f"only {sel.sum()} decay levels in [{lo:g}, {hi:g}]; need at least 5")
    if np.any(m[sel] < 1e-14):
        raise UnderflowError(f"|Y - ell| falls below 1e-14 in [{lo:g}, {hi:g}]; shrink the window")
    slope = np.polyfit(z[sel], np.log(m[sel]), 1)[0]
    return float(-slope)


def sharpness_functional(cell: CellSolution, u0_ref: ModalReference, epsilon: float) -> float:
    """Predicted leading H1 error of the Dirichlet problem.

    ``epsilon^{1/2} * (int_0^L |d u0 / d x2 (x1, 0)|^2 dx1)^{1/2} * ||grad Y||``,
    the integral taken over one macro period of the modal reference.
    """
    du0 = complex(u0_ref.U(0.0, 1))
    trace = np.sqrt(u0_ref.L) * abs(du0)
    return float(np.sqrt(epsilon) * trace * cell.grad_norm())
