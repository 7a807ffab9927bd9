from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

DIMENSION = 2


class ExponentError(ValueError):
    """Exponents outside the admissible range 1 < q_i < p_i < N."""


def conjugate(r: float) -> float:
    """Hoelder conjugate r' = r / (r - 1)."""
    return r / (r - 1.0)


def critical_exponent(p: float, n: int = DIMENSION) -> float:
    """Sobolev exponent p* = N p / (N - p), defined for p < N."""
    if not p < n:
        raise ExponentError(f"p* needs p < N = {n}, got p = {p}")
    return n * p / (n - p)


def validate_exponents(p1: float, q1: float, p2: float, q2: float):
    for i, (p, q) in enumerate(((p1, q1), (p2, q2)), start=1):
        if not 1.0 < q:
            raise ExponentError(f"q{i} = {q} violates 1<q_i<p_i<N (need q{i} > 1)")
        if not q < p:
            raise ExponentError(f"q{i} = {q} >= p{i} = {p} violates 1<q_i<p_i<N")
        if not p < DIMENSION:
            raise ExponentError(f"p{i} = {p} violates 1<q_i<p_i<N with N = {DIMENSION}")


@dataclass(frozen=True)
class ProblemSpec:
    """Exponents, competition coefficients and reactions of the Dirichlet system."""

    p1: float
    q1: float
    p2: float
    q2: float
    mu1: float
    mu2: float
    f1: Optional[object] = None
    f2: Optional[object] = None

    def __post_init__(self):
        validate_exponents(self.p1, self.q1, self.p2, self.q2)

    @property
    def p1_star(self) -> float:
        return critical_exponent(self.p1)

    @property
    def p2_star(self) -> float:
        return critical_exponent(self.p2)

    def exponents(self, i: int) -> tuple[float, float, float]:
        """(p_i, q_i, mu_i) for equation i in {1, 2}."""
        if i == 1:
            return self.p1, self.q1, self.mu1
        if i == 2:
            return self.p2, self.q2, self.mu2
        raise ValueError(f"equation index must be 1 or 2, got {i}")

    def with_reactions(self, f1, f2) -> "ProblemSpec":
        return replace(self, f1=f1, f2=f2)

    def with_mu(self, mu1: float, mu2: float) -> "ProblemSpec":
        return replace(self, mu1=mu1, mu2=mu2)


DEFAULT_EXPONENTS = dict(p1=1.8, q1=1.3, p2=1.7, q2=1.2)
