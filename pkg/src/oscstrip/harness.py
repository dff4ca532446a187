"""Convergence studies for the oscillating-boundary estimates.

Each study fixes a forcing ``f = g(x2) exp(2 pi i k x1 / L)``, solves the
perturbed problem on a Bloch cell for every epsilon, measures the H1 distance
to the straight-strip modal reference and fits a log-log rate. Every data
point is computed at two mesh resolutions and accepted only when the two
errors agree to 10%.
"""

from __future__ import annotations

import ast
import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction

import numpy as np
from scipy import optimize, stats

from .errors import (
    DegenerateFitError,
    DiscretizationNotConverged,
    ExperimentSpecError,
    MissingDegeneracyError,
)
from .forms import (
    BoundaryConditionSpec,
    EtaLaw,
    assemble_perturbed,
    coefficient_preset,
    effective_robin_coefficient,
    regime_classify,
    robin_preset,
)
from .geometry import BoundaryProfile, StripSpec, build_mesh, make_profile
from .solve import error_h1_on_perturbed, modal_reference, solve_system

THEOREMS = (
    "T2.1_dirichlet",
    "T2.3_neumann",
    "T2.2_robin_slow",
    "T2.4_robin_high",
    "T2.5_robin_degenerate",
)
CSV_COLUMNS = (
    "epsilon",
    "eta",
    "h_max",
    "l2_error",
    "h1_semi_error",
    "h1_error",
    "bottom_layer_l2",
    "predicted_bound",
    "ratio",
)
THREADS_ENV = "OSCSTRIP_THREADS"
RESOLUTION_TOL = 0.10


# -- degeneracy ---------------------------------------------------------------------


@dataclass(frozen=True)
class RobinDegeneracySpec:
    """Zeros ``X_n`` of a non-negative Robin coefficient and its local vanishing law.

    Near each zero ``a ~ dist^p``, so the sublevel set ``{a <= delta}`` sits in
    intervals of half-width ``mu(delta) = delta^{1/p}``. ``delta(eps, eta)``
    solves ``delta mu(delta) |ln mu(delta)| = balance * eps / eta`` by
    bisection on the branch where ``delta -> 0`` as ``eps / eta -> 0``.
    """

    zero_points: tuple
    p: float = 2.0
    balance: float = 0.05
    min_gap: float = field(init=False)

    def __post_init__(self):
        pts = np.sort(np.asarray(self.zero_points, dtype=float))
        if pts.size == 0:
            raise ExperimentSpecError("degeneracy needs at least one zero point")
        if self.p <= 0 or self.balance <= 0:
            raise ExperimentSpecError("need p > 0 and balance > 0")
        gap = float(np.diff(pts).min()) if pts.size > 1 else np.inf
        if gap <= 0:
            raise ExperimentSpecError("zero points must be distinct")
        object.__setattr__(self, "zero_points", tuple(float(x) for x in pts))
        object.__setattr__(self, "min_gap", gap)

    @classmethod
    def periodic(cls, spacing: float, L: float, p: float = 2.0, balance: float = 0.05):
        n = int(round(L / spacing))
        return cls(tuple(spacing * np.arange(n)), p=p, balance=balance)

    def mu(self, delta):
        return np.asarray(delta, dtype=float) ** (1.0 / self.p)

    def _balance_fn(self, delta):
        m = self.mu(delta)
        return delta * m * abs(np.log(m))

    @property
    def delta_max(self) -> float:
        # maximiser of delta^{1 + 1/p} |ln delta|
        return float(np.exp(-self.p / (self.p + 1)))

    def delta(self, epsilon: float, eta: float) -> float:
        target = self.balance * epsilon / eta
        top = self.delta_max
        if self._balance_fn(top) < target:
            raise ExperimentSpecError(
                f"balance equation has no root for eps/eta = {epsilon / eta:g}; lower the balance constant"
            )
        return float(optimize.bisect(lambda t: self._balance_fn(t) - target, 1e-300, top, xtol=1e-300, rtol=1e-15))


def predicted_bound(
    theorem: str,
    epsilon: float,
    eta: float,
    degeneracy: RobinDegeneracySpec | None = None,
    alpha: float | None = None,
) -> float:
    """Right-hand side of the rate estimate named by ``theorem`` (unit constant)."""
    if theorem in ("T2.1_dirichlet", "T2.3_neumann"):
        return float(np.sqrt(eta))
    if theorem == "T2.2_robin_slow":
        if alpha is None:
            raise ValueError("the slow Robin bound needs alpha")
        return float(np.sqrt(eta) + abs(eta**2 / epsilon**2 - alpha**2))
    if theorem == "T2.4_robin_high":
        return float(np.sqrt(eta) + np.sqrt(epsilon / eta))
    if theorem == "T2.5_robin_degenerate":
        if degeneracy is None:
            raise MissingDegeneracyError("the degenerate Robin bound needs a RobinDegeneracySpec")
        delta = degeneracy.delta(epsilon, eta)
        mu = float(degeneracy.mu(delta))
        return float(np.sqrt(eta) + np.sqrt(epsilon / (eta * delta)) + np.sqrt(mu * abs(np.log(mu))))
    raise ExperimentSpecError(f"unknown theorem tag {theorem!r}")


# -- experiment configuration -------------------------------------------------------


@dataclass(frozen=True)
class Forcing:
    """``g(x2) = sin(pi x2 / d)``; picklable so studies can fan out over processes."""

    d: float = 1.0

    def __call__(self, x2):
        return np.sin(np.pi * np.asarray(x2) / self.d)


@dataclass(frozen=True)
class ExperimentSpec:
    theorem: str
    epsilons: tuple = (1 / 8, 1 / 16, 1 / 32, 1 / 64)
    eta_law: EtaLaw = EtaLaw(1.0, 1.0)
    profile: BoundaryProfile = field(default_factory=lambda: make_profile("cosine", (1.0,)))
    coeff_preset: str = "laplacian"
    robin_preset: str = "constant"
    robin_value: float = 1.0
    zero_spacing: float = 0.125
    mode: int = 1
    L: float = 6.0
    d: float = 1.0
    n_per_period: int = 16
    n_vertical: int = 16
    grading: float = 1.0
    naive_a0: bool = False
    degeneracy: RobinDegeneracySpec | None = None
    max_refinements: int = 1
    reference_n: int = 2**14
    tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if self.theorem == "T2.5_robin_degenerate" and self.degeneracy is None:
            object.__setattr__(self, "degeneracy", RobinDegeneracySpec.periodic(self.zero_spacing, self.L))
        self.check()

    @property
    def regime(self):
        return regime_classify(self.epsilons, self.eta_law)

    @property
    def alpha(self) -> float | None:
        r = self.regime
        return r.alpha if r.kind == "slow" else None

    def check(self) -> None:
        if self.theorem not in THEOREMS:
            raise ExperimentSpecError(f"unknown theorem tag {self.theorem!r}")
        eps = np.asarray(self.epsilons)
        if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise ExperimentSpecError("epsilon list must be positive and strictly decreasing")
        kind = self.regime.kind
        if self.theorem == "T2.2_robin_slow" and kind != "slow":
            raise ExperimentSpecError("the slow Robin study needs eta / epsilon bounded (theta >= 1)")
        if self.theorem in ("T2.4_robin_high", "T2.5_robin_degenerate"):
            if kind != "high":
                raise ExperimentSpecError("high-oscillation studies need eta / epsilon -> infinity (theta < 1)")
            if self.profile.is_constant:
                raise ExperimentSpecError("high-oscillation studies need a non-constant profile")
        if self.theorem == "T2.4_robin_high":
            a = robin_preset(self.robin_preset, self.robin_value, self.zero_spacing)
            x = np.linspace(0, self.L, 1001)
            if np.min(a(x, np.zeros_like(x))) <= 0:
                raise ExperimentSpecError("the high Robin study needs a >= c1 > 0 on the boundary layer")
        if self.theorem == "T2.5_robin_degenerate" and self.robin_preset != "degenerate_quadratic":
            raise ExperimentSpecError("the degenerate Robin study needs the degenerate_quadratic preset")

    def boundary(self):
        """(perturbed condition, homogenized condition) for this theorem."""
        t = self.theorem
        if t == "T2.1_dirichlet":
            return BoundaryConditionSpec.dirichlet(), BoundaryConditionSpec.dirichlet()
        if t == "T2.3_neumann":
            return BoundaryConditionSpec.neumann(), BoundaryConditionSpec.neumann()
        a = robin_preset(self.robin_preset, self.robin_value, self.zero_spacing)
        if t == "T2.2_robin_slow":
            a0 = a if self.naive_a0 else effective_robin_coefficient(a, self.profile, self.alpha)
            return BoundaryConditionSpec.robin(a), BoundaryConditionSpec.robin(a0)
        return BoundaryConditionSpec.robin(a), BoundaryConditionSpec.dirichlet()

    def cell_periods(self, epsilon: float) -> int:
        """Oscillation periods in one Bloch cell: one, or one zero spacing for T2.5."""
        if self.theorem != "T2.5_robin_degenerate":
            return 1
        n = self.zero_spacing / epsilon
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ExperimentSpecError(f"zero spacing {self.zero_spacing} is not a multiple of epsilon {epsilon}")
        return int(round(n))

    def bound(self, epsilon: float, eta: float) -> float:
        return predicted_bound(self.theorem, epsilon, eta, self.degeneracy, self.alpha)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, BoundaryProfile):
                v = {"kind": v.kind, "params": list(v.params)}
            elif isinstance(v, EtaLaw):
                v = {"theta": v.theta, "c": v.c}
            elif isinstance(v, RobinDegeneracySpec):
                v = {"zero_points": list(v.zero_points), "p": v.p, "balance": v.balance}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def default_spec(theorem: str, **overrides) -> ExperimentSpec:
    """Calibrated desk-scale configuration for each theorem."""
    base = dict(theorem=theorem)
    if theorem == "T2.4_robin_high":
        base.update(eta_law=EtaLaw(2 / 3, 1.0), n_per_period=32, n_vertical=8)
    elif theorem == "T2.5_robin_degenerate":
        base.update(
            eta_law=EtaLaw(2 / 3, 1.0),
            n_per_period=32,
            n_vertical=8,
            robin_preset="degenerate_quadratic",
            robin_value=3.0,
        )
    base.update(overrides)
    return ExperimentSpec(**base)


# -- reports ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateRow:
    epsilon: float
    eta: float
    h_max: float
    l2_error: float
    h1_semi_error: float
    h1_error: float
    bottom_layer_l2: float
    predicted_bound: float
    ratio: float
    resolution_change: float = 0.0
    residual: float = 0.0


@dataclass
class RateReport:
    rows: list
    fitted_slope: float | None = None
    slope_stderr: float | None = None
    bound_constant: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: -r.epsilon)

    @classmethod
    def from_rows(cls, rows, metadata=None) -> "RateReport":
        rep = cls(list(rows), metadata=dict(metadata or {}))
        if len(rep.rows) >= 3:
            rep.fitted_slope, rep.slope_stderr = fit_rate([(r.epsilon, r.h1_error) for r in rep.rows])
        if rep.rows:
            rep.bound_constant = bound_constant(rep.rows)
        return rep

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "fitted_slope": self.fitted_slope,
            "slope_stderr": self.slope_stderr,
            "bound_constant": self.bound_constant,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RateReport":
        return cls(
            rows=[RateRow(**r) for r in data["rows"]],
            fitted_slope=data.get("fitted_slope"),
            slope_stderr=data.get("slope_stderr"),
            bound_constant=data.get("bound_constant"),
            metadata=data.get("metadata", {}),
        )


def fit_rate(pairs) -> tuple[float, float]:
    """Least-squares slope of ``log(error)`` on ``log(epsilon)`` and its standard error."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3:
        raise DegenerateFitError("need at least three (epsilon, error) pairs")
    if np.any(arr <= 0):
        raise DegenerateFitError("epsilon and error values must be positive")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    if np.ptp(x) == 0:
        raise DegenerateFitError("all epsilon values coincide")
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr)


def bound_constant(rows) -> float:
    return float(max(r.h1_error / r.predicted_bound for r in rows))


def bound_stability(report: RateReport) -> float:
    """Growth of the bound constant when the grid is extended by its finest epsilon."""
    if len(report.rows) < 2:
        raise ValueError("need at least two rows")
    return bound_constant(report.rows) / bound_constant(report.rows[:-1])


def is_monotone(report: RateReport, allowance: float = 0.05) -> bool:
    """H1 errors nonincreasing as epsilon decreases, up to a relative allowance."""
    e = report.column("h1_error")
    return bool(np.all(e[1:] <= e[:-1] * (1 + allowance)))


def _fmt(v) -> str:
    return repr(float(v))


def emit_report(report: RateReport, format: str = "csv", path: str | None = None) -> str:
    """Serialize a report as CSV (fixed columns) or JSON; optionally write it to ``path``."""
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in report.rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        text = buf.getvalue()
    elif format == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def parse_report(text: str, format: str = "json") -> RateReport:
    if format == "json":
        return RateReport.from_dict(json.loads(text))
    reader = csv.DictReader(io.StringIO(text))
    rows = [RateRow(**{k: float(v) for k, v in rec.items()}) for rec in reader]
    return RateReport(rows)


# -- running studies -----------------------------------------------------------------


def _solve_error(spec: ExperimentSpec, epsilon: float, level: int, reference, bc):
    eta = float(spec.eta_law(epsilon))
    strip = StripSpec(d=spec.d, epsilon=epsilon, eta=eta, L=spec.L)
    nv = int(np.ceil(spec.n_vertical * level * spec.d / epsilon - 1e-9))
    mesh = build_mesh(
        spec.profile,
        strip,
        spec.n_per_period * level,
        nv,
        spec.grading,
        cell_periods=spec.cell_periods(epsilon),
    )
    kappa = 2 * np.pi * spec.mode / spec.L
    g = Forcing(spec.d)

    def f(x1, x2):
        return g(x2) * np.exp(1j * kappa * x1)

    system = assemble_perturbed(
        mesh, coefficient_preset(spec.coeff_preset), bc, f, bloch_phase=np.exp(1j * kappa * mesh.width)
    )
    system.metadata["mode"] = spec.mode
    sol = solve_system(system, tol=spec.tol)
    return error_h1_on_perturbed(sol, reference)


def reference_for(spec: ExperimentSpec):
    _, bc0 = spec.boundary()
    return modal_reference(
        spec.mode, coefficient_preset(spec.coeff_preset), bc0, Forcing(spec.d), n=spec.reference_n, d=spec.d, L=spec.L
    )


def study_point(spec: ExperimentSpec, epsilon: float, reference=None) -> RateRow:
    """Two-resolution error at one epsilon; refine while the errors disagree by 10% or more."""
    reference = reference if reference is not None else reference_for(spec)
    bc, _ = spec.boundary()
    level = 1
    coarse = _solve_error(spec, epsilon, level, reference, bc)
    for _ in range(spec.max_refinements + 1):
        fine = _solve_error(spec, epsilon, 2 * level, reference, bc)
        change = abs(fine.h1 - coarse.h1) / fine.h1
        if change < RESOLUTION_TOL:
            break
        coarse, level = fine, 2 * level
    else:
        raise DiscretizationNotConverged(epsilon, change)
    eta = float(spec.eta_law(epsilon))
    bound = spec.bound(epsilon, eta)
    return RateRow(
        epsilon=epsilon,
        eta=eta,
        h_max=fine.h_max,
        l2_error=fine.l2,
        h1_semi_error=fine.h1_semi,
        h1_error=fine.h1,
        bottom_layer_l2=fine.bottom_layer_l2,
        predicted_bound=bound,
        ratio=fine.h1 / bound,
        resolution_change=change,
        residual=fine.residual or 0.0,
    )


def _point_task(args):
    spec, eps = args
    return study_point(spec, eps)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ExperimentSpecError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def run_convergence_study(spec: ExperimentSpec, threads: int | None = None) -> RateReport:
    """Run every epsilon of ``spec`` and assemble the report in epsilon order.

    ``threads`` (default from ``OSCSTRIP_THREADS``) worker processes share the
    epsilon values; each point is computed identically either way.
    """
    threads = thread_count() if threads is None else max(1, int(threads))
    if threads == 1:
        ref = reference_for(spec)
        rows = [study_point(spec, e, ref) for e in spec.epsilons]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_point_task, [(spec, e) for e in spec.epsilons]))
    meta = {
        "theorem": spec.theorem,
        "regime": str(spec.regime),
        "spec": spec.to_dict(),
    }
    return RateReport.from_rows(rows, meta)


# -- configuration files ----------------------------------------------------------------

CONFIG_KEYS = {
    "theorem",
    "profile.kind",
    "profile.params",
    "eta.theta",
    "eta.c",
    "eps.list",
    "mesh.n_per_period",
    "mesh.n_vertical",
    "mesh.grading",
    "coeff.preset",
    "robin.preset",
    "robin.value",
    "robin.zero_spacing",
    "robin.naive",
    "forcing.mode",
    "forcing.L",
    "degeneracy.p",
    "degeneracy.balance",
    "out.format",
    "out.path",
}


def _literal(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _number(v) -> float:
    return float(Fraction(v)) if isinstance(v, str) else float(v)


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; values are Python/TOML-style literals, ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ExperimentSpecError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ExperimentSpecError(f"line {lineno}: unknown key {key!r}")
        out[key] = {"true": True, "false": False}.get(value.lower(), None)
        if out[key] is None:
            out[key] = _literal(value)
    return out


def spec_from_config(cfg: dict) -> tuple[ExperimentSpec, dict]:
    """Build an ExperimentSpec from parsed config; returns (spec, output options)."""
    if "theorem" not in cfg:
        raise ExperimentSpecError("config needs a theorem key")
    theorem = cfg["theorem"]
    kw = {}
    if "profile.kind" in cfg:
        params = cfg.get("profile.params", (1.0,))
        params = (params,) if np.isscalar(params) else tuple(params)
        kw["profile"] = make_profile(cfg["profile.kind"], params)
    if "eta.theta" in cfg or "eta.c" in cfg:
        base = default_spec(theorem).eta_law
        kw["eta_law"] = EtaLaw(_number(cfg.get("eta.theta", base.theta)), _number(cfg.get("eta.c", base.c)))
    if "eps.list" in cfg:
        kw["epsilons"] = tuple(_number(e) for e in cfg["eps.list"])
    simple = {
        "mesh.n_per_period": ("n_per_period", int),
        "mesh.n_vertical": ("n_vertical", int),
        "mesh.grading": ("grading", float),
        "coeff.preset": ("coeff_preset", str),
        "robin.preset": ("robin_preset", str),
        "robin.value": ("robin_value", float),
        "robin.zero_spacing": ("zero_spacing", _number),
        "robin.naive": ("naive_a0", bool),
        "forcing.mode": ("mode", int),
        "forcing.L": ("L", _number),
    }
    for key, (name, conv) in simple.items():
        if key in cfg:
            kw[name] = conv(cfg[key])
    spec = default_spec(theorem, **kw)
    if "degeneracy.p" in cfg or "degeneracy.balance" in cfg:
        deg = RobinDegeneracySpec.periodic(
            spec.zero_spacing,
            spec.L,
            p=float(cfg.get("degeneracy.p", 2.0)),
            balance=float(cfg.get("degeneracy.balance", 0.05)),
        )
        spec = replace(spec, degeneracy=deg)
    out = {"format": cfg.get("out.format", "csv"), "path": cfg.get("out.path")}
    return spec, out
