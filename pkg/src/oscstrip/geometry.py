"""Oscillating strip geometry and boundary-fitted periodic meshes.

The perturbed domain is ``{eta * b(x1 / epsilon) < x2 < d}`` with a
1-periodic, non-negative, C^2 profile ``b``. Meshes cover one computational
cell ``0 <= x1 <= W`` where ``W`` is an integer number of oscillation periods
(by default the whole macro period ``L``). Nodes sit on vertical columns and
are stretched between the oscillating bottom and the flat top, so refinements
nest and the left/right columns match exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import (
    DegenerateDomainError,
    MeshQualityError,
    NegativeProfileError,
    PeriodError,
    ProfileError,
)

PROFILE_KINDS = ("constant", "cosine", "smoothed_custom")

_DENSE = 100_000
_NEG_TOL = 1e-12


@dataclass(frozen=True)
class BoundaryProfile:
    """A 1-periodic boundary profile ``b(t)``.

    ``constant``: ``params = (c,)`` and ``b = c``.
    ``cosine``: ``params = (c,)`` and ``b = c (1 - cos 2 pi t) / 2``.
    ``smoothed_custom``: ``params = (c0, a1, s1, a2, s2, ...)`` and
    ``b = c0 + sum_m a_m cos(2 pi m t) + s_m sin(2 pi m t)``.
    """

    kind: str
    params: tuple
    b_max: float = field(init=False)
    b_min: float = field(init=False)

    period = 1.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ProfileError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        lo, hi = self._extrema()
        object.__setattr__(self, "b_max", hi)
        object.__setattr__(self, "b_min", lo)

    # -- Fourier representation -------------------------------------------------
    def _fourier(self):
        """Return (c0, cos coefficients, sin coefficients)."""
        if self.kind == "constant":
            return self.params[0], np.zeros(0), np.zeros(0)
        if self.kind == "cosine":
            c = self.params[0]
            return c / 2, np.array([-c / 2]), np.zeros(1)
        rest = np.asarray(self.params[1:], dtype=float)
        if rest.size % 2:
            rest = np.append(rest, 0.0)
        return self.params[0], rest[0::2], rest[1::2]

    def _eval(self, t, order):
        t = np.asarray(t, dtype=float)
        c0, ac, bs = self._fourier()
        out = np.full(t.shape, c0 if order == 0 else 0.0)
        for m, (am, bm) in enumerate(zip(ac, bs), start=1):
            w = 2 * np.pi * m
            arg = w * t
            if order == 0:
                out = out + am * np.cos(arg) + bm * np.sin(arg)
            elif order == 1:
                out = out + w * (-am * np.sin(arg) + bm * np.cos(arg))
            else:
                out = out - w * w * (am * np.cos(arg) + bm * np.sin(arg))
        return out

    def sample(self, t):
        return self._eval(t, 0)

    def derivative(self, t):
        return self._eval(t, 1)

    def second_derivative(self, t):
        return self._eval(t, 2)

    __call__ = sample

    @property
    def is_constant(self) -> bool:
        return self.b_max - self.b_min < 1e-14

    def _extrema(self):
        if self.kind == "constant":
            return self.params[0], self.params[0]
        if self.kind == "cosine":
            return 0.0, self.params[0]
        t = np.arange(_DENSE) / _DENSE
        vals = self.sample(t)
        h = 1.0 / _DENSE

        def polish(sign, idx):
            res = optimize.minimize_scalar(
                lambda s: sign * float(self.sample(s)),
                bounds=(t[idx] - h, t[idx] + h),
                method="bounded",
                options={"xatol": 1e-13},
            )
            return sign * min(sign * vals[idx], res.fun)

        return polish(1.0, int(np.argmin(vals))), polish(-1.0, int(np.argmax(vals)))

    def shifted(self, offset: float) -> "BoundaryProfile":
        """Profile ``t -> b(t + offset)`` as a smoothed_custom profile."""
        c0, ac, bs = self._fourier()
        params = [c0]
        for m, (am, bm) in enumerate(zip(ac, bs), start=1):
            ph = 2 * np.pi * m * offset
            # a cos(w(t+o)) + b sin(w(t+o)) re-expanded in cos(wt), sin(wt)
            params += [am * np.cos(ph) + bm * np.sin(ph), bm * np.cos(ph) - am * np.sin(ph)]
        return BoundaryProfile("smoothed_custom", tuple(params))

    def check(self, n_dense: int = 10_000, seed: int = 0) -> None:
        """Raise ProfileError if any profile invariant fails."""
        t = np.arange(n_dense) / n_dense
        b = self.sample(t)
        if b.min() < -_NEG_TOL:
            raise NegativeProfileError(f"profile minimum {b.min():.3e} < 0")
        r = np.random.default_rng(seed).uniform(-5, 5, 100)
        if np.max(np.abs(self.sample(r + 1) - self.sample(r))) > 1e-12:
            raise PeriodError("profile is not 1-periodic")
        if b.max() > self.b_max + 1e-12:
            raise ProfileError("b_max is below a sampled value")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params), "b_max": self.b_max}


def make_profile(kind: str, params: Sequence[float] = (1.0,), lift: bool = False) -> BoundaryProfile:
    """Build a validated :class:`BoundaryProfile`.

    Parameters
    ----------
    kind : {"constant", "cosine", "smoothed_custom"}
    params : sequence of float
        ``(c,)`` for constant/cosine, Fourier coefficients
        ``(c0, a1, s1, a2, s2, ...)`` for smoothed_custom.
    lift : bool
        For smoothed_custom only: raise the constant term so that the minimum
        is exactly zero when the synthesized profile would dip below zero.
        Without it, a negative profile is an error.
    """
    params = tuple(float(p) for p in params)
    if kind == "constant":
        if len(params) != 1 or params[0] < 0:
            raise ProfileError("constant profile needs one parameter c >= 0")
    elif kind == "cosine":
        if len(params) != 1 or params[0] <= 0:
            raise ProfileError("cosine profile needs one parameter c > 0")
    elif kind == "smoothed_custom":
        if len(params) == 0:
            raise ProfileError("smoothed_custom needs at least the constant term")
        prof = BoundaryProfile(kind, params)
        if lift and prof.b_min < 0:
            params = (params[0] - prof.b_min,) + params[1:]
    else:
        raise ProfileError(f"unknown profile kind {kind!r}")
    prof = BoundaryProfile(kind, params)
    if prof.b_min < -_NEG_TOL:
        raise NegativeProfileError(f"profile minimum {prof.b_min:.3e} < 0")
    prof.check()
    return prof


def profile_from_samples(samples, n_modes: int | None = None, lift: bool = False) -> BoundaryProfile:
    """Smooth uniform samples ``b(j / N)``, ``j = 0..N`` into a Fourier profile.

    The last sample must repeat the first (the endpoint t = 1).
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 1 or s.size < 5:
        raise ProfileError("need at least 5 samples including the endpoint")
    if abs(s[-1] - s[0]) > 1e-10 * max(1.0, np.abs(s).max()):
        raise PeriodError("first and last samples differ; data is not 1-periodic")
    body = s[:-1]
    n = body.size
    coef = np.fft.rfft(body) / n
    n_modes = min(n_modes or (n - 1) // 2, (n - 1) // 2)
    params = [coef[0].real]
    for m in range(1, n_modes + 1):
        params += [2 * coef[m].real, -2 * coef[m].imag]
    return make_profile("smoothed_custom", params, lift=lift)


@dataclass(frozen=True)
class StripSpec:
    """Strip height ``d``, oscillation period ``epsilon``, amplitude ``eta`` and macro period ``L``."""

    d: float = 1.0
    epsilon: float = 0.125
    eta: float = 0.125
    L: float = 1.0

    @property
    def periods(self) -> int:
        return int(round(self.L / self.epsilon))

    def check(self, profile: BoundaryProfile) -> None:
        if self.d <= 0 or self.epsilon <= 0 or self.eta < 0 or self.L <= 0:
            raise DegenerateDomainError("need d > 0, epsilon > 0, eta >= 0, L > 0")
        ratio = self.L / self.epsilon
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise DegenerateDomainError(f"L / epsilon = {ratio} is not a positive integer")
        if self.eta * profile.b_max >= self.d / 2:
            raise DegenerateDomainError(
                f"eta * b_max = {self.eta * profile.b_max:g} is not below d / 2 = {self.d / 2:g}"
            )


@dataclass(frozen=True)
class QualityReport:
    min_angle: float
    max_aspect_ratio: float
    h_max: float
    n_elements: int


@dataclass(frozen=True, eq=False)
class MeshedStrip:
    """Structured triangulation of one computational cell.

    Node ``(i, j)`` (column ``i = 0..n1``, row ``j = 0..n2``) has index
    ``i * (n2 + 1) + j``. Column ``n1`` is the periodic image of column 0.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    bottom_edges: np.ndarray
    bottom_edge_lengths: np.ndarray
    top_nodes: np.ndarray
    bottom_nodes: np.ndarray
    periodic_pairs: np.ndarray
    h_max: float
    n1: int
    n2: int
    width: float
    strip: StripSpec
    profile: BoundaryProfile
    diagonals: np.ndarray
    ladder: np.ndarray | None = None

    def __post_init__(self):
        check_mesh(self)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def heights(self) -> np.ndarray:
        """Node heights as an ``(n1 + 1, n2 + 1)`` table."""
        return self.nodes[:, 1].reshape(self.n1 + 1, self.n2 + 1)

    @property
    def column_x(self) -> np.ndarray:
        return self.nodes[:: self.n2 + 1, 0]

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())


def _triangle_angles(p: np.ndarray) -> np.ndarray:
    """Interior angles in degrees, shape (T, 3), for vertex coordinates (T, 3, 2)."""
    out = np.empty(p.shape[:2])
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cross = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        dot = np.einsum("ij,ij->i", u, v)
        out[:, k] = np.degrees(np.arctan2(cross, dot))
    return out


def check_mesh(mesh: MeshedStrip, min_angle: float | None = None) -> None:
    area = mesh.signed_areas()
    bad = np.flatnonzero(area <= 0)
    if bad.size:
        raise MeshQualityError(f"{bad.size} triangle(s) with non-positive area, first index {bad[0]}")
    if min_angle is not None:
        ang = _triangle_angles(mesh.nodes[mesh.triangles]).min()
        if ang < min_angle:
            raise MeshQualityError(f"minimum angle {ang:.3f} deg below {min_angle} deg")


def _structured(x1: np.ndarray, Z: np.ndarray):
    """Triangles and boundary data for a column-structured node table ``Z``."""
    n1 = x1.size - 1
    n2 = Z.shape[1] - 1
    X = np.repeat(x1[:, None], n2 + 1, axis=1)
    nodes = np.column_stack([X.ravel(), Z.ravel()])
    idx = np.arange((n1 + 1) * (n2 + 1)).reshape(n1 + 1, n2 + 1)
    p00 = idx[:-1, :-1].ravel()
    p10 = idx[1:, :-1].ravel()
    p01 = idx[:-1, 1:].ravel()
    p11 = idx[1:, 1:].ravel()
    d_main = np.linalg.norm(nodes[p11] - nodes[p00], axis=1)
    d_anti = np.linalg.norm(nodes[p01] - nodes[p10], axis=1)
    # split along the shorter diagonal; ties go to p00-p11 for determinism
    anti = d_anti < d_main * (1 - 1e-12)
    t1 = np.where(anti[:, None], np.column_stack([p00, p10, p01]), np.column_stack([p00, p10, p11]))
    t2 = np.where(anti[:, None], np.column_stack([p10, p11, p01]), np.column_stack([p00, p11, p01]))
    tri = np.empty((2 * p00.size, 3), dtype=np.int64)
    tri[0::2] = t1
    tri[1::2] = t2
    bottom = np.column_stack([idx[:-1, 0], idx[1:, 0]])
    blen = np.linalg.norm(nodes[bottom[:, 1]] - nodes[bottom[:, 0]], axis=1)
    pairs = np.column_stack([idx[0, :], idx[-1, :]])
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    h_max = float(np.linalg.norm(nodes[edges[:, 1]] - nodes[edges[:, 0]], axis=1).max())
    return dict(
        nodes=nodes,
        triangles=tri,
        bottom_edges=bottom,
        bottom_edge_lengths=blen,
        top_nodes=idx[:, -1].copy(),
        bottom_nodes=idx[:, 0].copy(),
        periodic_pairs=pairs,
        h_max=h_max,
        n1=n1,
        n2=n2,
        diagonals=anti.reshape(n1, n2),
    )


def graded_ladder(n_vertical: int, grading: float) -> np.ndarray:
    return (np.arange(n_vertical + 1) / n_vertical) ** grading


def build_mesh(
    profile: BoundaryProfile,
    strip: StripSpec,
    n_per_period: int,
    n_vertical: int,
    grading: float = 2.0,
    cell_periods: int | None = None,
    min_angle: float = 1.0,
) -> MeshedStrip:
    """Boundary-fitted mesh of ``cell_periods`` oscillation periods (default: all of L).

    Node ``(i, j)`` sits at ``x1 = i * epsilon / n_per_period`` and
    ``x2 = B + s_j (d - B)`` with ``B = eta * b(x1 / epsilon)`` and
    ``s_j = (j / n_vertical) ** grading``.
    """
    strip.check(profile)
    if n_per_period < 8 or n_vertical < 8:
        raise ValueError("need n_per_period >= 8 and n_vertical >= 8")
    if grading < 1:
        raise ValueError("grading must be >= 1")
    periods = strip.periods if cell_periods is None else int(cell_periods)
    if periods < 1 or periods > strip.periods or strip.periods % periods:
        raise DegenerateDomainError(f"cell_periods={cell_periods} must divide L / epsilon = {strip.periods}")
    n1 = n_per_period * periods
    width = periods * strip.epsilon
    i = np.arange(n1 + 1)
    x1 = i * (width / n1)
    # evaluate the profile on the exact lattice fraction to keep columns periodic
    t = (i % n_per_period) / n_per_period
    B = strip.eta * profile.sample(t)
    s = graded_ladder(n_vertical, grading)
    Z = B[:, None] + s[None, :] * (strip.d - B[:, None])
    Z[:, 0] = B
    Z[:, -1] = strip.d
    mesh = MeshedStrip(**_structured(x1, Z), width=width, strip=strip, profile=profile, ladder=s)
    check_mesh(mesh, min_angle=min_angle)
    return mesh


def mesh_quality(mesh: MeshedStrip) -> QualityReport:
    p = mesh.nodes[mesh.triangles]
    ang = _triangle_angles(p)
    a = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    area = np.abs(mesh.signed_areas())
    # longest edge over the shortest altitude, scaled so the equilateral triangle gives 1
    longest = np.maximum(np.maximum(a, b), c)
    aspect = longest * longest / (2 * area) * (np.sqrt(3) / 2)
    return QualityReport(
        min_angle=float(ang.min()),
        max_aspect_ratio=float(aspect.max()),
        h_max=mesh.h_max,
        n_elements=int(mesh.triangles.shape[0]),
    )


def export_mesh(mesh: MeshedStrip) -> str:
    """Plain-text mesh dump.

    Three sections, each introduced by a ``#`` header line giving the column
    order: ``nodes`` (index x1 x2), ``triangles`` (index n0 n1 n2, counter-
    clockwise) and ``bottom_edges`` (index n0 n1 length).
    """
    buf = io.StringIO()
    buf.write(f"# nodes {mesh.n_nodes}: index x1 x2\n")
    for k, (x, y) in enumerate(mesh.nodes):
        buf.write(f"{k} {x:.17g} {y:.17g}\n")
    buf.write(f"# triangles {len(mesh.triangles)}: index n0 n1 n2\n")
    for k, t in enumerate(mesh.triangles):
        buf.write(f"{k} {t[0]} {t[1]} {t[2]}\n")
    buf.write(f"# bottom_edges {len(mesh.bottom_edges)}: index n0 n1 length\n")
    for k, (e, ln) in enumerate(zip(mesh.bottom_edges, mesh.bottom_edge_lengths)):
        buf.write(f"{k} {e[0]} {e[1]} {ln:.17g}\n")
    return buf.getvalue()


def read_mesh_tables(text: str) -> dict:
    """Parse :func:`export_mesh` output back into numpy tables."""
    tables: dict[str, list] = {}
    current = None
    for line in text.splitlines():
        if line.startswith("#"):
            current = line[1:].split()[0]
            tables[current] = []
        elif line.strip():
            tables[current].append(line.split()[1:])
    return {
        "nodes": np.array(tables["nodes"], dtype=float).reshape(-1, 2),
        "triangles": np.array(tables["triangles"], dtype=np.int64).reshape(-1, 3),
        "bottom_edges": np.array([r[:2] for r in tables["bottom_edges"]], dtype=np.int64).reshape(-1, 2),
        "bottom_edge_lengths": np.array([r[2] for r in tables["bottom_edges"]], dtype=float),
    }
