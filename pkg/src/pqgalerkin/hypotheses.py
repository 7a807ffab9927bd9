"""Sampling audit of the growth and sign conditions on the reactions, the
coercivity margin, and the a-priori radius of the finite-dimensional solves.

Sampling cannot prove a pointwise inequality; a passing report means no
violation was found on the sampled set.
"""

from __future__ import annotations

import io
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .problem import ProblemSpec, conjugate

RELATIVE_SLACK = 1e-12
MAX_RECORDED_VIOLATIONS = 1000


def _zero_function(points):
    return np.zeros(len(np.atleast_2d(points)))


@dataclass(frozen=True)
class HypothesisConstants:
    C1: float
    C2: float
    sigma1: Callable = _zero_function
    sigma2: Callable = _zero_function
    c1: float = 0.0
    c2: float = 0.0
    d1: float = 0.0
    d2: float = 0.0
    gamma1: Callable = _zero_function
    gamma2: Callable = _zero_function
    D1: Optional[float] = None
    D2: Optional[float] = None
    r1: Optional[float] = None
    s1: Optional[float] = None
    r2: Optional[float] = None
    s2: Optional[float] = None
    gamma_l1_norms: Optional[tuple] = None

    def __post_init__(self):
        for name in ("C1", "C2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("c1", "c2", "d1", "d2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("D1", "D2"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def has_strong_growth(self) -> bool:
        return None not in (self.D1, self.D2, self.r1, self.r2)

    def validate_windows(self, spec: ProblemSpec):
        """r_i, s_i must lie in (1, p_i*)."""
        for i, pstar in ((1, spec.p1_star), (2, spec.p2_star)):
            for name in (f"r{i}", f"s{i}"):
                val = getattr(self, name)
                if val is not None and not 1.0 < val < pstar:
                    raise ValueError(f"{name} = {val} outside (1, p{i}*) = (1, {pstar:.6g})")

    def with_gamma_norms(self, mesh) -> "HypothesisConstants":
        """Attach the L^1 norms of gamma_1, gamma_2 by quadrature on ``mesh``."""
        from dataclasses import replace
        from .femspace import space_of
        space = space_of(mesh)
        pts, w = space.quad_points, space.quad_weights
        norms = (float(w @ np.abs(self.gamma1(pts))), float(w @ np.abs(self.gamma2(pts))))
        return replace(self, gamma_l1_norms=norms)


@dataclass(frozen=True)
class SamplingPlan:
    """Points of the domain times random reaction arguments.

    Each argument block (s, t, xi, nu) gets an independent magnitude, zero
    with probability ``zero_fraction`` and otherwise log-uniform in
    [min_magnitude, max_magnitude], with a random sign or direction. A small
    structured block of magnitude combinations is prepended.
    """

    n_samples: int = 100_000
    max_magnitude: float = 1e4
    min_magnitude: float = 1e-4
    zero_fraction: float = 0.1
    seed: int = 0
    points: Optional[np.ndarray] = None
    workers: int = 1

    @classmethod
    def for_mesh(cls, mesh, **kwargs) -> "SamplingPlan":
        from .femspace import space_of
        return cls(points=space_of(mesh).quad_points, **kwargs)

    def draw(self):
        rng = np.random.default_rng(self.seed)
        n = int(self.n_samples)
        shells = np.array([0.0, self.min_magnitude, 1.0, np.sqrt(self.max_magnitude),
                           self.max_magnitude])
        grid = np.array(np.meshgrid(shells, shells, shells, shells, indexing="ij")).reshape(4, -1).T
        grid = grid[: min(len(grid), n)]
        n_rand = n - len(grid)
        lo, hi = np.log10(self.min_magnitude), np.log10(self.max_magnitude)
        mags = 10.0 ** rng.uniform(lo, hi, size=(n_rand, 4))
        mags[rng.random((n_rand, 4)) < self.zero_fraction] = 0.0
        mags = np.vstack([grid, mags])
        signs = rng.choice([-1.0, 1.0], size=(n, 2))
        angles = rng.uniform(0.0, 2.0 * np.pi, size=(n, 2))
        s = signs[:, 0] * mags[:, 0]
        t = signs[:, 1] * mags[:, 1]
        xi = mags[:, 2:3] * np.column_stack([np.cos(angles[:, 0]), np.sin(angles[:, 0])])
        nu = mags[:, 3:4] * np.column_stack([np.cos(angles[:, 1]), np.sin(angles[:, 1])])
        if self.points is None:
            x = rng.random((n, 2))
        else:
            pts = np.asarray(self.points, dtype=float)
            x = pts[rng.integers(0, len(pts), size=n)]
        return x, s, t, xi, nu


@dataclass
class CheckReport:
    hypothesis: str
    samples_tested: int
    violations: list = field(default_factory=list)
    n_violations: int = 0
    margin_seven: Optional[float] = None
    passed: bool = False
    conditional: bool = False

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.passed and self.conditional:
            status += " (conditional on the discrete eigenvalue)"
        text = f"{self.hypothesis}: {status}; {self.samples_tested} samples, {self.n_violations} violations"
        if self.margin_seven is not None:
            text += f"; coercivity margin {self.margin_seven:.6g}"
        return text

    CSV_HEADER = ["hypothesis", "samples_tested", "violations", "margin_seven", "passed", "conditional"]

    def csv_row(self) -> list:
        margin = "" if self.margin_seven is None else repr(self.margin_seven)
        return [self.hypothesis, self.samples_tested, self.n_violations, margin,
                int(self.passed), int(self.conditional)]


def reports_csv(reports: Sequence[CheckReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CheckReport.CSV_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def violations_csv(reports: Sequence[CheckReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hypothesis", "sample", "equation", "x", "y", "s", "t", "xi1", "xi2",
                "nu1", "nu2", "lhs", "rhs"])
    for r in reports:
        for v in r.violations:
            w.writerow([r.hypothesis, v["sample"], v["equation"], *map(repr, v["x"]),
                        repr(v["s"]), repr(v["t"]), *map(repr, v["xi"]), *map(repr, v["nu"]),
                        repr(v["lhs"]), repr(v["rhs"])])
    return buf.getvalue()


def _norm(v):
    return np.hypot(v[:, 0], v[:, 1])


def _finite_or_raise(values, name, x, offset):
    bad = ~np.isfinite(values)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{name} returned a non-finite value at sample {offset + k} "
                         f"(x = {tuple(x[k])})")


def _run(plan: SamplingPlan, pieces, name: str) -> CheckReport:
    """``pieces`` is a list of (equation, lhs_fn, rhs_fn) evaluated per chunk."""
    x, s, t, xi, nu = plan.draw()
    n = len(s)
    chunk = 20_000
    starts = list(range(0, n, chunk))

    def work(start):
        sl = slice(start, start + chunk)
        args = (x[sl], s[sl], t[sl], xi[sl], nu[sl])
        found = []
        for eq, lhs_fn, rhs_fn in pieces:
            lhs, rhs = lhs_fn(*args), rhs_fn(*args)
            _finite_or_raise(lhs, f"reaction f{eq}", args[0], start)
            bad = np.flatnonzero(lhs > rhs + RELATIVE_SLACK * (1.0 + np.abs(rhs) + np.abs(lhs)))
            found += [(start + int(k), eq, float(lhs[k]), float(rhs[k])) for k in bad]
        return found

    if plan.workers > 1:
        with ThreadPoolExecutor(plan.workers) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(st) for st in starts]
    found = sorted((v for part in results for v in part), key=lambda v: (v[0], v[1]))
    violations = [dict(sample=k, equation=eq, x=tuple(x[k].tolist()), s=float(s[k]),
                       t=float(t[k]), xi=tuple(xi[k].tolist()), nu=tuple(nu[k].tolist()),
                       lhs=lhs, rhs=rhs)
                  for k, eq, lhs, rhs in found[:MAX_RECORDED_VIOLATIONS]]
    return CheckReport(name, n, violations, len(found), passed=not found)


def h1_majorants(spec: ProblemSpec, constants: HypothesisConstants):
    p1, p2, ps1, ps2 = spec.p1, spec.p2, spec.p1_star, spec.p2_star
    c1p, c2p = conjugate(ps1), conjugate(ps2)

    def rhs1(x, s, t, xi, nu):
        return constants.C1 * (np.abs(s) ** (ps1 - 1) + np.abs(t) ** (ps2 / c1p)
                               + _norm(xi) ** (p1 / c1p) + _norm(nu) ** (p2 / c1p)) + constants.sigma1(x)

    def rhs2(x, s, t, xi, nu):
        return constants.C2 * (np.abs(s) ** (ps1 / c2p) + np.abs(t) ** (ps2 - 1)
                               + _norm(xi) ** (p1 / c2p) + _norm(nu) ** (p2 / c2p)) + constants.sigma2(x)

    return rhs1, rhs2


def h1prime_majorants(spec: ProblemSpec, constants: HypothesisConstants):
    if not constants.has_strong_growth:
        raise ValueError("D_i and r_i are required for the strong growth check")
    constants.validate_windows(spec)
    p1, p2, ps1, ps2 = spec.p1, spec.p2, spec.p1_star, spec.p2_star
    r1c, r2c = conjugate(constants.r1), conjugate(constants.r2)

    def rhs1(x, s, t, xi, nu):
        return constants.D1 * (np.abs(s) ** (ps1 / r1c) + np.abs(t) ** (ps2 / r1c)
                               + _norm(xi) ** (p1 / r1c) + _norm(nu) ** (p2 / r1c)) + constants.sigma1(x)

    def rhs2(x, s, t, xi, nu):
        return constants.D2 * (np.abs(s) ** (ps1 / r2c) + np.abs(t) ** (ps2 / r2c)
                               + _norm(xi) ** (p1 / r2c) + _norm(nu) ** (p2 / r2c)) + constants.sigma2(x)

    return rhs1, rhs2


def h1_constants_from_h1prime(constants: HypothesisConstants) -> HypothesisConstants:
    """Constants under which the stronger growth bound implies the basic one.

    Each stronger-bound power has a smaller exponent than its counterpart, and
    a^e <= 1 + a^E for 0 < e < E, so C_i = D_i and sigma_i + 4 D_i suffice.
    """
    from dataclasses import replace
    if not constants.has_strong_growth:
        raise ValueError("D_i and r_i are required")
    D1, D2, s1, s2 = constants.D1, constants.D2, constants.sigma1, constants.sigma2
    return replace(constants, C1=D1, C2=D2,
                   sigma1=lambda x: s1(x) + 4.0 * D1, sigma2=lambda x: s2(x) + 4.0 * D2)


def _abs_of(f):
    return lambda x, s, t, xi, nu: np.abs(f(x, s, t, xi, nu))


def check_H1(reactions, spec: ProblemSpec, constants: HypothesisConstants,
             sampler: SamplingPlan = SamplingPlan()) -> CheckReport:
    f1, f2 = reactions
    rhs1, rhs2 = h1_majorants(spec, constants)
    return _run(sampler, [(1, _abs_of(f1), rhs1), (2, _abs_of(f2), rhs2)], "H1")


def check_H1prime(reactions, spec: ProblemSpec, constants: HypothesisConstants,
                  sampler: SamplingPlan = SamplingPlan()) -> CheckReport:
    f1, f2 = reactions
    rhs1, rhs2 = h1prime_majorants(spec, constants)
    return _run(sampler, [(1, _abs_of(f1), rhs1), (2, _abs_of(f2), rhs2)], "H1'")


def margin_seven(constants: HypothesisConstants, lambda_p1: float, lambda_p2: float) -> float:
    """1 - [c1 + c2 + (d1 + d2) / min(lambda_p1, lambda_p2)]; positive is required."""
    lam = min(lambda_p1, lambda_p2)
    return 1.0 - (constants.c1 + constants.c2 + (constants.d1 + constants.d2) / lam)


def _lambda_trend(est) -> tuple[float, Optional[float]]:
    """Finest value and last inter-level drift from a float, an estimate or a
    coarse-to-fine sequence of either."""
    if isinstance(est, (list, tuple)):
        vals = [_lambda_value(e) for e in est]
        if not vals:
            raise ValueError("empty eigenvalue sequence")
        drift = abs(vals[-2] - vals[-1]) if len(vals) > 1 else None
        return vals[-1], drift
    return _lambda_value(est), None


def _lambda_value(e) -> float:
    return float(getattr(e, "lam", e))


def check_H2(reactions, spec: ProblemSpec, constants: HypothesisConstants, lambda1,
             sampler: SamplingPlan = SamplingPlan()) -> CheckReport:
    """Sign condition on f1*s and f2*t plus the coercivity margin.

    ``lambda1`` is a pair (for p1 and p2); each entry may be a number, an
    :class:`~pqgalerkin.eigen.EigenEstimate`, or a coarse-to-fine sequence of
    those. Since discrete eigenvalues approach the continuous ones from above,
    a pass is flagged conditional unless the margin stays positive after
    lowering the minimal eigenvalue by twice its last inter-level drift.
    """
    f1, f2 = reactions
    p1, p2 = spec.p1, spec.p2
    k = constants

    def lhs1(x, s, t, xi, nu):
        return f1(x, s, t, xi, nu) * s

    def lhs2(x, s, t, xi, nu):
        return f2(x, s, t, xi, nu) * t

    def rhs1(x, s, t, xi, nu):
        return (k.c1 * (_norm(xi) ** p1 + _norm(nu) ** p2)
                + k.d1 * (np.abs(s) ** p1 + np.abs(t) ** p2) + k.gamma1(x))

    def rhs2(x, s, t, xi, nu):
        return (k.c2 * (_norm(xi) ** p1 + _norm(nu) ** p2)
                + k.d2 * (np.abs(s) ** p1 + np.abs(t) ** p2) + k.gamma2(x))

    report = _run(sampler, [(1, lhs1, rhs1), (2, lhs2, rhs2)], "H2")
    (l1, drift1), (l2, drift2) = _lambda_trend(lambda1[0]), _lambda_trend(lambda1[1])
    report.margin_seven = margin_seven(constants, l1, l2)
    report.passed = report.n_violations == 0 and report.margin_seven > 0
    if report.passed:
        drift, lam = (drift1, l1) if l1 <= l2 else (drift2, l2)
        if drift is None:
            report.conditional = True
        else:
            lowered = lam - 2.0 * drift
            report.conditional = not (lowered > 0 and 1.0 - (
                k.c1 + k.c2 + (k.d1 + k.d2) / lowered) > 0)
    return report


class CoercivityError(ValueError):
    pass


def _radius_coefficients(spec, constants, lambdas, domain_measure):
    l1, l2 = (_lambda_value(v) for v in lambdas)
    if margin_seven(constants, l1, l2) <= 0:
        raise CoercivityError("hypothesis (7) violated: c1 + c2 + (d1 + d2)/lambda_min >= 1")
    if constants.gamma_l1_norms is None:
        raise ValueError("gamma L1 norms not attached; call with_gamma_norms(mesh) first")
    base = constants.c1 + constants.c2
    dsum = constants.d1 + constants.d2
    k1, k2 = 1.0 - base - dsum / l1, 1.0 - base - dsum / l2
    a1 = abs(spec.mu1) * domain_measure ** ((spec.p1 - spec.q1) / spec.p1)
    a2 = abs(spec.mu2) * domain_measure ** ((spec.p2 - spec.q2) / spec.p2)
    C = float(sum(constants.gamma_l1_norms))
    return k1, k2, a1, a2, C


def coercivity_lower_bound(rho1, rho2, spec, k1, k2, a1, a2, C):
    """Lower bound of the pairing of the discrete operator with (phi, psi) at
    norms (rho1, rho2)."""
    return (k1 * rho1 ** spec.p1 + k2 * rho2 ** spec.p2
            - a1 * rho1 ** spec.q1 - a2 * rho2 ** spec.q2 - C)


def worst_split(R: float, spec, coeffs, n_grid: int = 2001) -> tuple[float, float]:
    """Minimum over rho1 + rho2 = R of the coercivity lower bound, by a grid
    followed by a bounded scalar refinement. Returns (rho1, value)."""
    def g(r1):
        return coercivity_lower_bound(r1, R - r1, spec, *coeffs)

    grid = np.linspace(0.0, R, n_grid)
    vals = g(grid)
    j = int(np.argmin(vals))
    best_r, best_v = grid[j], vals[j]
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, n_grid - 1)]
    if hi > lo:
        res = minimize_scalar(g, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14 * max(R, 1e-300)})
        if res.fun < best_v:
            best_r, best_v = float(res.x), float(res.fun)
    return float(best_r), float(best_v)


def apriori_radius(spec: ProblemSpec, constants: HypothesisConstants, lambda1,
                   domain_measure: float, R_min: float = 1.0) -> float:
    """Smallest R beyond which every splitting rho1 + rho2 = R keeps the
    coercivity lower bound nonnegative.

    Falls back to ``R_min`` when the bound is nonnegative for every R (no
    competition terms and C = 0).
    """
    coeffs = _radius_coefficients(spec, constants, lambda1, domain_measure)

    def m(R):
        return worst_split(R, spec, coeffs)[1]

    R_hi = 1.0
    while m(R_hi) < 0:
        R_hi *= 2.0
        if R_hi > 1e300:
            raise CoercivityError("no radius found")
    scan = R_hi * np.logspace(-12, 0, 241)
    values = np.array([m(R) for R in scan])
    negative = np.flatnonzero(values < 0)
    if negative.size == 0:
        return float(R_min)
    j = int(negative[-1])
    lo, hi = scan[j], scan[j + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if m(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return float(hi * (1.0 + 1e-10))
