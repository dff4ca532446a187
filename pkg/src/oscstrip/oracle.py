"""Independent reference solutions.

Nothing here touches the finite-element assembly or the sparse solver: the
closed-form Robin example is evaluated directly, and the two-point oracle uses
central differences with its own tridiagonal elimination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConstructionError, SingularityError
from .forms import BoundaryConditionSpec, effective_robin_coefficient
from .geometry import BoundaryProfile

K_ROOT = np.exp(1j * np.pi / 4)  # k with k^2 = i
_CHECK_TOL = 1e-11


@dataclass(frozen=True)
class AnalyticExample:
    """Closed-form solution of ``-U'' - iU = -iF``, ``U'(0) = a0 U(0)``, ``U(d) = 0``.

    ``F`` is the indicator of ``(0, eta)``. All invariants are checked when
    the instance is created; a failure raises :class:`ConstructionError`.
    """

    eta: float
    d: float
    a_const: float
    a0: float
    k: complex = K_ROOT
    checks: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0 < self.eta < self.d:
            raise ValueError("need 0 < eta < d")
        object.__setattr__(self, "checks", self._verify())

    # coefficients of the two branches
    @property
    def _den(self):
        k, a0, d = self.k, self.a0, self.d
        return k * np.cos(k * d) + a0 * np.sin(k * d)

    @property
    def _upper_coef(self):
        k, a0, eta = self.k, self.a0, self.eta
        return -(k * np.sin(k * eta) + a0 * (1 - np.cos(k * eta))) / self._den

    @property
    def _lower_coef(self):
        k, a0, d, eta = self.k, self.a0, self.d, self.eta
        return (k * np.cos(k * (d - eta)) + a0 * np.sin(k * d)) / self._den

    def F(self, x2):
        x2 = np.asarray(x2, dtype=float)
        return np.where(x2 < self.eta, 1.0, 0.0)

    def _branches(self, x2, nu):
        """Values of derivative order ``nu`` on the lower and upper formulas."""
        k, r, C, A = self.k, self.a0 / self.k, self._lower_coef, self._upper_coef
        x = np.asarray(x2, dtype=float)
        y = self.d - x
        if nu == 0:
            lower = 1 + r * np.sin(k * x) - C * (np.cos(k * x) + r * np.sin(k * x))
            upper = A * np.sin(k * y)
        elif nu == 1:
            lower = r * k * np.cos(k * x) - C * (-k * np.sin(k * x) + r * k * np.cos(k * x))
            upper = -A * k * np.cos(k * y)
        else:
            lower = -r * k * k * np.sin(k * x) - C * (-k * k * np.cos(k * x) - r * k * k * np.sin(k * x))
            upper = -A * k * k * np.sin(k * y)
        return lower, upper

    def derivative(self, x2, nu: int = 1):
        lower, upper = self._branches(x2, nu)
        return np.where(np.asarray(x2) < self.eta, lower, upper)

    def U(self, x2):
        return self.derivative(x2, 0)

    __call__ = U

    def _verify(self) -> dict:
        xs_low = np.linspace(0, self.eta, 1002)[1:-1]
        xs_up = np.linspace(self.eta, self.d, 1002)[1:-1]
        res = max(
            np.max(np.abs(-self.derivative(x, 2) - 1j * self.U(x) + 1j * self.F(x))) for x in (xs_low, xs_up)
        )
        u0 = self._branches(0.0, 0)[0]
        du0 = self._branches(0.0, 1)[0]
        checks = {
            "ode_residual": float(res),
            "robin_residual": float(abs(du0 - self.a0 * u0)),
            "top_value": float(abs(self._branches(self.d, 0)[1])),
            "jump_value": float(abs(np.subtract(*self._branches(self.eta, 0)))),
            "jump_derivative": float(abs(np.subtract(*self._branches(self.eta, 1)))),
        }
        bad = {k: v for k, v in checks.items() if not v < _CHECK_TOL}
        if bad:
            raise ConstructionError(f"closed-form example fails its checks: {bad}")
        return checks


def analytic_example(
    eta: float,
    a_const: float,
    d: float = 1.0,
    profile: BoundaryProfile | None = None,
    alpha: float = 0.0,
) -> AnalyticExample:
    """Closed-form example with ``a0`` from the arclength-averaged Robin coefficient."""
    if profile is None:
        a0 = float(a_const)
    else:
        a0 = float(effective_robin_coefficient(a_const, profile, alpha)(0.0))
    return AnalyticExample(eta=eta, d=d, a_const=float(a_const), a0=a0)


# -- two-point boundary-value oracle ---------------------------------------------


@dataclass(frozen=True)
class ODECoefficients:
    """``-(p u')' + q u = g``; ``p`` and ``q`` are callables of x2 or constants."""

    p: Callable | float = 1.0
    q: Callable | complex = -1j

    @classmethod
    def modal(cls, mode: int = 0, L: float = 1.0, shift: complex = -1j, A11=1.0, A22=1.0, A0=0.0):
        kappa2 = (2 * np.pi * mode / L) ** 2

        def val(c, x):
            return c(x) if callable(c) else np.full(np.shape(x), c)

        return cls(
            p=lambda x: val(A22, x),
            q=lambda x: kappa2 * val(A11, x) + val(A0, x) + shift,
        )

    def eval(self, x):
        p = self.p(x) if callable(self.p) else np.full(x.shape, float(self.p))
        q = self.q(x) if callable(self.q) else np.full(x.shape, complex(self.q))
        return np.asarray(p, dtype=float), np.asarray(q, dtype=complex)


@dataclass(frozen=True)
class ODESolution:
    x: np.ndarray
    u: np.ndarray
    du: np.ndarray

    def __call__(self, x2):
        x2 = np.asarray(x2, dtype=float)
        return np.interp(x2, self.x, self.u.real) + 1j * np.interp(x2, self.x, self.u.imag)


def _as_bc(bc):
    """Normalize to ``("dirichlet", value)`` or ``("robin", a)`` meaning ``u' = a u``."""
    if isinstance(bc, BoundaryConditionSpec):
        if bc.kind == "Dirichlet":
            return "dirichlet", 0.0
        if bc.kind == "Neumann":
            return "robin", 0.0
        a = bc.robin_coefficient
        return "robin", float(a(0.0, 0.0) if callable(a) else a)
    kind, value = bc
    kind = kind.lower()
    if kind == "neumann":
        return "robin", 0.0
    if kind not in ("dirichlet", "robin"):
        raise ValueError(f"unknown boundary condition {kind!r}")
    return kind, value


def thomas(lower, diag, upper, rhs):
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = len(diag)
    c = np.empty(n, dtype=complex)
    y = np.empty(n, dtype=complex)
    piv = diag[0]
    if piv == 0:
        raise SingularityError("zero pivot in row 0")
    c[0] = upper[0] / piv
    y[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i] * c[i - 1]
        if piv == 0:
            raise SingularityError(f"zero pivot in row {i}")
        c[i] = upper[i] / piv
        y[i] = (rhs[i] - lower[i] * y[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        y[i] -= c[i] * y[i + 1]
    return y


def _cell_averages(g, x, h, breakpoints):
    """Average of ``g`` over each dual cell ``[x_j - h/2, x_j + h/2]`` clipped to the grid."""
    lo = np.maximum(x - h / 2, x[0])
    hi = np.minimum(x + h / 2, x[-1])
    gx, gw = np.polynomial.legendre.leggauss(4)
    total = np.zeros(x.size, dtype=complex)
    cuts = [lo]
    for b in sorted(breakpoints):
        cuts.append(np.clip(np.full_like(lo, b), lo, hi))
    cuts.append(hi)
    for a, b in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        pts = mid[:, None] + half[:, None] * gx[None, :]
        total += np.sum(gw[None, :] * np.asarray(g(pts), dtype=complex), axis=1) * half
    return total / (hi - lo)


def ode_bvp_oracle(coeff_1d: ODECoefficients, bc0, bcd, g, n: int = 2**14, d: float = 1.0, breakpoints=()) -> ODESolution:
    """Second-order finite differences for ``-(p u')' + q u = g`` on ``(0, d)``.

    Uniform grid of ``n`` intervals, ghost-point elimination for a Robin or
    Neumann end, dual-cell averages of ``g`` split at ``breakpoints``, and a
    direct tridiagonal solve. ``bc0``/``bcd`` are :class:`BoundaryConditionSpec`
    or tuples ``("dirichlet", value)``, ``("robin", a)`` (``u' = a u`` at 0,
    ``u' = -a u`` at d) or ``("neumann", 0)``.
    """
    if n < 2**14:
        raise ValueError("the oracle needs n >= 2**14")
    x = np.linspace(0.0, d, n + 1)
    h = d / n
    p, q = coeff_1d.eval(x)
    ph = np.asarray(coeff_1d.eval(0.5 * (x[:-1] + x[1:]))[0])  # p at midpoints
    rhs = _cell_averages(g, x, h, breakpoints) if g is not None else np.zeros(n + 1, dtype=complex)

    lower = np.zeros(n + 1, dtype=complex)
    upper = np.zeros(n + 1, dtype=complex)
    diag = q.astype(complex).copy()
    lower[1:] = -ph / h**2
    upper[:-1] = -ph / h**2
    diag[1:-1] += (ph[:-1] + ph[1:]) / h**2

    kind0, v0 = _as_bc(bc0)
    if kind0 == "dirichlet":
        diag[0], upper[0], rhs[0] = 1.0, 0.0, v0
    else:
        # ghost u_{-1} = u_1 - 2 h a u_0; use p(0) on both half cells
        diag[0] += 2 * p[0] / h**2 * (1 + h * v0)
        upper[0] = -2 * p[0] / h**2
        rhs[0] = g(np.array([0.0]))[0] if g is not None else 0.0
    kindd, vd = _as_bc(bcd)
    if kindd == "dirichlet":
        diag[-1], lower[-1], rhs[-1] = 1.0, 0.0, vd
    else:
        diag[-1] += 2 * p[-1] / h**2 * (1 + h * vd)
        lower[-1] = -2 * p[-1] / h**2
        rhs[-1] = g(np.array([d]))[0] if g is not None else 0.0
    u = thomas(lower, diag, upper, rhs)
    return ODESolution(x, u, np.gradient(u, x, edge_order=2))


# -- sharpness example ---------------------------------------------------------------


def bump(s, amplitude: float = 1.0, derivative: int = 0):
    """``amplitude * c (1 - s^2)^4`` on ``(-1, 1)``, unit L2 norm at amplitude 1."""
    s = np.asarray(s, dtype=float)
    c = 1.0 / np.sqrt(_BUMP_SQ)
    inside = np.abs(s) < 1
    w = 1 - s * s
    if derivative == 0:
        v = w**4
    elif derivative == 1:
        v = -8 * s * w**3
    else:
        v = -8 * w**3 + 48 * s * s * w**2
    return np.where(inside, amplitude * c * v, 0.0)


# int_{-1}^{1} (1 - s^2)^8 ds = 2 * 8!! / 17!! = 65536 / 109395
_BUMP_SQ = 65536.0 / 109395.0


@dataclass(frozen=True)
class SharpnessRow:
    eta: float
    f1_norm: float
    f2_norm: float
    f_norm: float
    u0_norm: float
    grad_u0_norm: float
    ratio: float
    grad_ratio: float


@dataclass(frozen=True)
class SharpnessStudy:
    rows: tuple
    bounded_below: bool
    spread: float

    def as_table(self):
        return [(r.eta, r.ratio) for r in self.rows]


def _gl_integral(fn, a, b, panels=256):
    x, w = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    pts = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * x[None, :]
    return np.sum(w[None, :] * half[:, None] * fn(pts))


def sharpness_lower_bound_study(
    eta_list,
    a_const: float = 1.0,
    profile: BoundaryProfile | None = None,
    amplitude: float = 1.0,
    d: float = 1.0,
    alpha: float = 1.0,
) -> SharpnessStudy:
    """Norms of ``u0 = phi(eta x1) U(x2)`` and its forcing for a list of amplitudes.

    With ``f = f1 + f2``, ``f1 = -i phi(eta x1) F(x2)`` and
    ``f2 = -eta^2 phi''(eta x1) U(x2)``, every norm separates into an x1
    integral of the bump and an x2 integral of the closed-form profile.
    ``ratio = ||u0||_{L2(3 eta < x2 < d)} / (eta^{1/2} ||f||)`` and
    ``grad_ratio`` is the same with ``grad u0``. ``bounded_below`` records
    whether all ratios lie within a factor 2 of each other.
    """
    etas = np.asarray(eta_list, dtype=float)
    if np.any(np.diff(etas) >= 0):
        raise ValueError("eta values must be strictly decreasing")
    if np.any(etas >= d / 10):
        raise ValueError("all eta values must be below d / 10")
    if profile is not None and (profile.b_min < 2 - 1e-12 or profile.b_max > 3 + 1e-12):
        raise ValueError("the sharpness scenario needs 2 <= b <= 3")

    def phi_int(a, b):
        return _gl_integral(lambda s: bump(s, amplitude, a) * bump(s, amplitude, b), -1.0, 1.0)

    P00, P11, P22, P02 = phi_int(0, 0), phi_int(1, 1), phi_int(2, 2), phi_int(0, 2)
    rows = []
    for eta in etas:
        ex = analytic_example(eta, a_const, d, profile, alpha if profile is not None else 0.0)

        def u2(x):
            return np.abs(ex.U(x)) ** 2

        def du2(x):
            return np.abs(ex.derivative(x)) ** 2

        U_low = _gl_integral(u2, 0.0, eta)
        U_up = _gl_integral(u2, eta, d)
        U_far = _gl_integral(u2, 3 * eta, d)
        dU_far = _gl_integral(du2, 3 * eta, d)
        U_low_int = _gl_integral(lambda x: ex.U(x), 0.0, eta)
        # the x1 integrals carry a factor 1 / eta from the substitution s = eta x1
        f1 = np.sqrt(P00)  # F has measure eta, cancelling the 1 / eta
        f2 = np.sqrt(eta**4 * P22 * U_up / eta)
        f_sq = (P00 * eta + eta**4 * P22 * (U_low + U_up) + 2 * eta**2 * P02 * U_low_int.imag) / eta
        u0 = np.sqrt(P00 * U_far / eta)
        gu0 = np.sqrt((eta**2 * P11 * U_far + P00 * dU_far) / eta)
        fn = np.sqrt(f_sq)
        rows.append(
            SharpnessRow(
                eta=float(eta),
                f1_norm=float(f1),
                f2_norm=float(f2),
                f_norm=float(fn),
                u0_norm=float(u0),
                grad_u0_norm=float(gu0),
                ratio=float(u0 / (np.sqrt(eta) * fn)),
                grad_ratio=float(gu0 / (np.sqrt(eta) * fn)),
            )
        )
    ratios = np.array([r.ratio for r in rows])
    spread = float(ratios.max() / ratios.min())
    return SharpnessStudy(rows=tuple(rows), bounded_below=bool(ratios.min() > 0 and spread <= 2.0), spread=spread)
