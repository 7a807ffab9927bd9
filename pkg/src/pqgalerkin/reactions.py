"""Reaction terms f(x, s, t, xi, nu) and the built-in convective family.

A reaction is evaluated on whole batches: ``x`` and the gradients ``xi``,
``nu`` are ``(n, 2)`` arrays, ``s`` and ``t`` are ``(n,)`` arrays, and the
result is ``(n,)``. Partials, when present, return
``(d_s, d_t, d_xi, d_nu)`` with matching shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .expressions import Expression, spatial_function
from .hypotheses import HypothesisConstants
from .problem import ProblemSpec, conjugate

FD_RELATIVE_STEP = 1e-6


class ReactionError(ValueError):
    pass


@dataclass(frozen=True)
class Reaction:
    evaluate: Callable
    partials: Optional[Callable] = None
    name: str = "reaction"

    def __call__(self, x, s, t, xi, nu):
        return self.evaluate(x, s, t, xi, nu)

    @property
    def has_partials(self) -> bool:
        return self.partials is not None


def _zero(x, s, t, xi, nu):
    return np.zeros(np.shape(s))


def _zero_partials(x, s, t, xi, nu):
    z = np.zeros(np.shape(s))
    return z, z.copy(), np.zeros(np.shape(xi)), np.zeros(np.shape(nu))


ZERO_REACTION = Reaction(_zero, _zero_partials, name="zero")


def constant_reaction(value: float) -> Reaction:
    def f(x, s, t, xi, nu):
        return np.full(np.shape(s), float(value))
    return Reaction(f, _zero_partials, name=f"constant({value})")


def source_reaction(g: Callable, name: str = "source") -> Reaction:
    """Reaction ``g(x)`` that ignores the state."""
    def f(x, s, t, xi, nu):
        return np.asarray(g(x), dtype=float)
    return Reaction(f, _zero_partials, name=name)


def expression_reaction(source: str) -> Reaction:
    expr = Expression(source)

    def f(x, s, t, xi, nu):
        x = np.atleast_2d(x)
        return expr(x=x[:, 0], y=x[:, 1], s=np.asarray(s), t=np.asarray(t),
                    xi1=xi[:, 0], xi2=xi[:, 1], nu1=nu[:, 0], nu2=nu[:, 1])

    return finite_difference_partials(Reaction(f, name=source))


def finite_difference_partials(reaction: Reaction) -> Reaction:
    """Attach central-difference partials with step 1e-6 (1 + |argument|)."""
    ev = reaction.evaluate

    def partials(x, s, t, xi, nu):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        xi = np.asarray(xi, dtype=float)
        nu = np.asarray(nu, dtype=float)

        def central(arg, shift):
            h = FD_RELATIVE_STEP * (1.0 + np.abs(arg))
            plus, minus = shift(h), shift(-h)
            d = (ev(x, *plus) - ev(x, *minus)) / (2.0 * h)
            if not np.all(np.isfinite(d)):
                bad = int(np.flatnonzero(~np.isfinite(d))[0])
                raise ReactionError(f"non-finite finite-difference probe at sample {bad}")
            return d

        def bump(a, col, h):
            b = a.copy()
            b[:, col] += h
            return b

        ds = central(s, lambda h: (s + h, t, xi, nu))
        dt = central(t, lambda h: (s, t + h, xi, nu))
        dxi = np.column_stack([
            central(xi[:, k], lambda h, k=k: (s, t, bump(xi, k, h), nu)) for k in range(2)])
        dnu = np.column_stack([
            central(nu[:, k], lambda h, k=k: (s, t, xi, bump(nu, k, h))) for k in range(2)])
        return ds, dt, dxi, dnu

    return replace(reaction, partials=partials)


def _zero_h(points):
    return np.zeros(len(np.atleast_2d(points)))


_zero_h.source = "0"


def _signed_power(a, e):
    """sign(a) |a|^e, i.e. |a|^(e-1) a extended by 0 at a = 0."""
    return np.sign(a) * np.abs(a) ** e


def _power_gradient(v, e):
    """Gradient of |v|^e with respect to the 2-vector v (zero at v = 0 for e > 1)."""
    n = np.hypot(v[:, 0], v[:, 1])
    scale = np.zeros_like(n)
    nz = n > 0
    scale[nz] = e * n[nz] ** (e - 2.0)
    return scale[:, None] * v


def _coupling(s):
    return s / (s * s + 1.0)


def _coupling_derivative(s):
    return (1.0 - s * s) / (s * s + 1.0) ** 2


@dataclass(frozen=True)
class ExampleReactionParams:
    """Parameters of the convective reaction family.

    ``r1``/``r2`` are optional: when set, the cross-coupling exponents
    p2/(p1*)' and p1/(p2*)' are replaced by p2/r1' and p1/r2', which moves the
    family strictly inside the stronger growth window (the literal family
    touches its boundary).
    """

    alpha1: float = 1.5
    alpha2: float = 1.5
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    h1: Callable = field(default=_zero_h)
    h2: Callable = field(default=_zero_h)
    r1: Optional[float] = None
    r2: Optional[float] = None

    def resolved(self, spec: ProblemSpec) -> "ExampleReactionParams":
        """Fill unset betas at 80% of their upper bounds."""
        b1 = self.beta1 if self.beta1 is not None else 0.8 * beta_upper_bound(spec, 1)
        b2 = self.beta2 if self.beta2 is not None else 0.8 * beta_upper_bound(spec, 2)
        return replace(self, beta1=b1, beta2=b2)

    def validate(self, spec: ProblemSpec):
        for i, alpha, beta, p in ((1, self.alpha1, self.beta1, spec.p1),
                                  (2, self.alpha2, self.beta2, spec.p2)):
            if not 1.0 <= alpha < p:
                raise ValueError(f"alpha{i} = {alpha} violates 1 <= alpha_i < p_i = {p}")
            bound = beta_upper_bound(spec, i)
            if beta is None or not 1.0 <= beta < bound:
                raise ValueError(f"beta{i} = {beta} violates 1 <= beta_i < p_i/(p_i*)' = {bound:.6g}")
        for i, r in ((1, self.r1), (2, self.r2)):
            if r is None:
                continue
            lo, hi = h1prime_window(spec, replace(self, r1=None, r2=None), i)
            if not lo <= r < hi:
                raise ValueError(f"r{i} = {r} outside the admissible window [{lo:.6g}, {hi:.6g})")


def beta_upper_bound(spec: ProblemSpec, i: int) -> float:
    p = spec.p1 if i == 1 else spec.p2
    pstar = spec.p1_star if i == 1 else spec.p2_star
    return p / conjugate(pstar)


def cross_exponents(spec: ProblemSpec, params: ExampleReactionParams) -> tuple[float, float]:
    """Exponent of |t| and |nu| in f1, and of |s| and |xi| in f2."""
    r1 = params.r1 if params.r1 is not None else spec.p1_star
    r2 = params.r2 if params.r2 is not None else spec.p2_star
    return spec.p2 / conjugate(r1), spec.p1 / conjugate(r2)


def h1prime_window(spec: ProblemSpec, params: ExampleReactionParams, i: int) -> tuple[float, float]:
    """Range [lo, p_i*) of r_i for which the family obeys the stronger growth
    bound with D_i = 1: the own-variable power alpha_i - 1 and the own-gradient
    power beta_i must not exceed p_i*/r_i' and p_i/r_i'."""
    params = params.resolved(spec)
    if i == 1:
        p, pstar, alpha, beta = spec.p1, spec.p1_star, params.alpha1, params.beta1
    else:
        p, pstar, alpha, beta = spec.p2, spec.p2_star, params.alpha2, params.beta2
    caps = [p / beta]
    if alpha > 1.0:
        caps.append(pstar / (alpha - 1.0))
    rprime_max = min(caps)
    lo = conjugate(rprime_max) if rprime_max > 1.0 else np.inf
    return max(lo, 1.0 + 1e-12), pstar


def admissible_r(spec: ProblemSpec, params: ExampleReactionParams) -> tuple[float, float]:
    """Midpoints of the two r-windows."""
    out = []
    for i in (1, 2):
        lo, hi = h1prime_window(spec, params, i)
        if not lo < hi:
            raise ValueError(f"empty r{i} window for these parameters")
        out.append(0.5 * (lo + hi))
    return out[0], out[1]


def young_slack(x: float, P: float, eps: float) -> float:
    """max over a >= 0 of a^x - eps a^P, for 0 < x < P and eps > 0."""
    if not 0.0 < x < P:
        raise ValueError(f"need 0 < x < P, got x = {x}, P = {P}")
    return (1.0 - x / P) * (x / (eps * P)) ** (x / (P - x))


def _example_pair(spec: ProblemSpec, params: ExampleReactionParams):
    a1, a2, b1, b2 = params.alpha1, params.alpha2, params.beta1, params.beta2
    e1, e2 = cross_exponents(spec, params)
    h1, h2 = params.h1, params.h2

    def mag(v):
        return np.hypot(v[:, 0], v[:, 1])

    def f1(x, s, t, xi, nu):
        bracket = np.abs(t) ** e1 + mag(xi) ** b1 + mag(nu) ** e1 + h1(x)
        return _signed_power(s, a1 - 1.0) + _coupling(s) * bracket

    def f1_partials(x, s, t, xi, nu):
        bracket = np.abs(t) ** e1 + mag(xi) ** b1 + mag(nu) ** e1 + h1(x)
        k = _coupling(s)
        ds = _power_derivative(s, a1 - 1.0) + _coupling_derivative(s) * bracket
        dt = k * e1 * _signed_power(t, e1 - 1.0)
        return ds, dt, k[:, None] * _power_gradient(xi, b1), k[:, None] * _power_gradient(nu, e1)

    def f2(x, s, t, xi, nu):
        bracket = np.abs(s) ** e2 + mag(xi) ** e2 + mag(nu) ** b2 + h2(x)
        return _signed_power(t, a2 - 1.0) + _coupling(t) * bracket

    def f2_partials(x, s, t, xi, nu):
        bracket = np.abs(s) ** e2 + mag(xi) ** e2 + mag(nu) ** b2 + h2(x)
        k = _coupling(t)
        dt = _power_derivative(t, a2 - 1.0) + _coupling_derivative(t) * bracket
        ds = k * e2 * _signed_power(s, e2 - 1.0)
        return ds, dt, k[:, None] * _power_gradient(xi, e2), k[:, None] * _power_gradient(nu, b2)

    return (Reaction(f1, f1_partials, name="example f1"),
            Reaction(f2, f2_partials, name="example f2"))


# |s| below this is treated as this value when differentiating |s|^(alpha-2) s
POWER_DERIVATIVE_FLOOR = 1e-12


def _power_derivative(a, e):
    """d/da of sign(a)|a|^e; for e < 1 the blow-up at 0 is capped."""
    return e * np.maximum(np.abs(a), POWER_DERIVATIVE_FLOOR) ** (e - 1.0)


def build_example_reactions(params: ExampleReactionParams, spec: ProblemSpec,
                            c=(0.3, 0.3), d=(0.5, 0.5)):
    """Return ``(f1, f2, constants)`` for the convective family.

    The growth constants are C_i = 1 and sigma_i = |h_i| + 3. The sign
    condition uses the given (c_i, d_i); gamma_i = |h_i| + c_hat_i where
    c_hat_i sums the exact Young slacks of the four sub-critical powers.
    When ``params.r1``/``r2`` are set, the stronger growth constants
    D_i = 1 with the same sigma_i are filled in as well (s_i = r_i).
    """
    params = params.resolved(spec)
    params.validate(spec)
    f1, f2 = _example_pair(spec, params)
    e1, e2 = cross_exponents(spec, params)
    (c1, c2), (d1, d2) = c, d
    p1, p2 = spec.p1, spec.p2
    chat1 = (young_slack(params.alpha1, p1, d1) + young_slack(e1, p2, d1)
             + young_slack(params.beta1, p1, c1) + young_slack(e1, p2, c1))
    chat2 = (young_slack(e2, p1, d2) + young_slack(params.alpha2, p2, d2)
             + young_slack(e2, p1, c2) + young_slack(params.beta2, p2, c2))
    h1, h2 = params.h1, params.h2

    def sigma1(x):
        return np.abs(h1(x)) + 3.0

    def sigma2(x):
        return np.abs(h2(x)) + 3.0

    def gamma1(x):
        return np.abs(h1(x)) + chat1

    def gamma2(x):
        return np.abs(h2(x)) + chat2

    strong = {}
    if params.r1 is not None and params.r2 is not None:
        strong = dict(D1=1.0, D2=1.0, r1=params.r1, s1=params.r1, r2=params.r2, s2=params.r2)
    constants = HypothesisConstants(
        C1=1.0, C2=1.0, sigma1=sigma1, sigma2=sigma2,
        c1=c1, c2=c2, d1=d1, d2=d2, gamma1=gamma1, gamma2=gamma2, **strong)
    return f1, f2, constants


def example_problem(mu1: float, mu2: float, params: Optional[ExampleReactionParams] = None,
                    p1=1.8, q1=1.3, p2=1.7, q2=1.2, c=(0.3, 0.3), d=(0.5, 0.5)):
    """Problem with the convective reactions at the default exponents; returns
    ``(spec, constants)``."""
    spec = ProblemSpec(p1, q1, p2, q2, mu1, mu2)
    f1, f2, constants = build_example_reactions(params or ExampleReactionParams(), spec, c, d)
    return spec.with_reactions(f1, f2), constants


def spatial(source_or_callable) -> Callable:
    if callable(source_or_callable):
        return source_or_callable
    return spatial_function(str(source_or_callable))
