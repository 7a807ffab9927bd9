"""Run configuration: a TOML document with fixed sections and keys.

Unknown sections or keys are errors, every error carries a line/column, and
a parsed config serializes back to a canonical document that parses to an
equal config.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .expressions import Expression, ExpressionError
from .problem import ExponentError, ProblemSpec, validate_exponents


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line, self.column = line, column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class DomainConfig:
    type: str = "unit_square"
    cells: int = 2
    levels: int = 3          # finest level index
    first_level: int = 0     # coarsest level solved


@dataclass(frozen=True)
class ProblemConfig:
    p1: float = 1.8
    q1: float = 1.3
    p2: float = 1.7
    q2: float = 1.2
    mu1: float = 0.3
    mu2: float = 0.3


@dataclass(frozen=True)
class ReactionConfig:
    type: str = "convective"               # convective | expression | zero
    alpha1: float = 1.5
    alpha2: float = 1.5
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    h1: str = "0"
    h2: str = "0"
    r1: Optional[float] = None
    r2: Optional[float] = None
    f1: Optional[str] = None
    f2: Optional[str] = None


@dataclass(frozen=True)
class HypothesisConfig:
    c1: float = 0.3
    c2: float = 0.3
    d1: float = 0.5
    d2: float = 0.5
    # only used for expression reactions; spatial functions are expressions in x, y
    C1: Optional[float] = None
    C2: Optional[float] = None
    sigma1: Optional[str] = None
    sigma2: Optional[str] = None
    gamma1: Optional[str] = None
    gamma2: Optional[str] = None
    D1: Optional[float] = None
    D2: Optional[float] = None
    r1: Optional[float] = None
    s1: Optional[float] = None
    r2: Optional[float] = None
    s2: Optional[float] = None


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_newton: int = 50
    eps_start: float = 1e-2
    eps_end: float = 1e-8
    eps_stages: int = 6
    eigen_tol: float = 1e-10
    initial: str = "bump"                  # bump | zero
    initial_amplitude: float = 1.0
    override_hypotheses: bool = False


@dataclass(frozen=True)
class SamplingConfig:
    samples: int = 100_000
    min_magnitude: float = 1e-4
    max_magnitude: float = 1e4
    zero_fraction: float = 0.1
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class ProbeConfig:
    t_min: Optional[float] = None          # default 1e-3 t*
    t_max: Optional[float] = None          # default 1e3 t*
    points: int = 601


@dataclass(frozen=True)
class EigenConfig:
    r: Optional[float] = None              # default: both p1 and p2


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "output"


@dataclass(frozen=True)
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    reactions: ReactionConfig = field(default_factory=ReactionConfig)
    hypotheses: HypothesisConfig = field(default_factory=HypothesisConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eigen: EigenConfig = field(default_factory=EigenConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def problem_spec(self) -> ProblemSpec:
        p = self.problem
        return ProblemSpec(p.p1, p.q1, p.p2, p.q2, p.mu1, p.mu2)


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


# ---------------------------------------------------------------- positions

def _locate(text: str, section: Optional[str], key: Optional[str] = None):
    """(line, column) of ``key`` inside ``[section]``, or of the section header."""
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"\[\s*([A-Za-z0-9_]+)\s*\]", s)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return n, raw.index("[") + 1
            continue
        if key is not None and current == section:
            m = re.match(r"\s*(\"?)([A-Za-z0-9_]+)\1\s*=", raw)
            if m and m.group(2) == key:
                return n, m.start(2) + 1
    return None, None


def _error(text, message, section=None, key=None):
    line, col = _locate(text, section, key) if text is not None else (None, None)
    return ConfigError(message, line, col)


# ---------------------------------------------------------------- typing

def _annotation(cls, name):
    return {f.name: f.type for f in fields(cls)}[name]


def _coerce(value, annotation: str, where: str):
    optional = annotation.startswith("Optional[")
    base = annotation[len("Optional["):-1] if optional else annotation
    if base == "bool":
        if isinstance(value, bool):
            return value
        raise TypeError(f"{where} must be true or false")
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{where} must be an integer")
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{where} must be a number")
        value = float(value)
        if not math.isfinite(value):
            raise TypeError(f"{where} must be finite")
        return value
    if base == "str":
        if not isinstance(value, str):
            raise TypeError(f"{where} must be a string")
        return value
    raise TypeError(f"unsupported field type {annotation}")


def _section(cls, data: dict, name: str, text: Optional[str]):
    if not isinstance(data, dict):
        raise _error(text, f"[{name}] must be a table", name)
    known = {f.name for f in fields(cls)}
    values = {}
    for key, value in data.items():
        if key not in known:
            raise _error(text, f"unknown key '{key}' in [{name}]", name, key)
        try:
            values[key] = _coerce(value, _annotation(cls, key), f"{name}.{key}")
        except TypeError as exc:
            raise _error(text, str(exc), name, key) from None
    return cls(**values)


# ---------------------------------------------------------------- validation

def _check(cfg: RunConfig, text: Optional[str]):
    d = cfg.domain
    if d.type != "unit_square":
        raise _error(text, f"domain.type '{d.type}' not supported (only unit_square)", "domain", "type")
    if d.cells < 1:
        raise _error(text, "domain.cells must be at least 1", "domain", "cells")
    if not 0 <= d.first_level <= d.levels:
        raise _error(text, "need 0 <= domain.first_level <= domain.levels", "domain", "first_level")
    if d.levels > 8:
        raise _error(text, "domain.levels above 8 is not supported", "domain", "levels")

    p = cfg.problem
    try:
        validate_exponents(p.p1, p.q1, p.p2, p.q2)
    except ExponentError as exc:
        key = re.match(r"\s*([pq][12])", str(exc))
        raise _error(text, str(exc), "problem", key.group(1) if key else None) from None

    r = cfg.reactions
    if r.type not in ("convective", "expression", "zero"):
        raise _error(text, f"reactions.type '{r.type}' must be convective, expression or zero",
                     "reactions", "type")
    exprs = [("reactions", "h1", r.h1, {"x", "y"}), ("reactions", "h2", r.h2, {"x", "y"})]
    if r.type == "expression":
        for k in ("f1", "f2"):
            if getattr(r, k) is None:
                raise _error(text, f"expression reactions need reactions.{k}", "reactions", "type")
            exprs.append(("reactions", k, getattr(r, k), None))
    h = cfg.hypotheses
    for k in ("sigma1", "sigma2", "gamma1", "gamma2"):
        if getattr(h, k) is not None:
            exprs.append(("hypotheses", k, getattr(h, k), {"x", "y"}))
    for sec, key, src, allowed in exprs:
        try:
            Expression(src) if allowed is None else Expression(src, allowed=allowed)
        except ExpressionError as exc:
            line, col = _locate(text, sec, key) if text is not None else (None, None)
            raise ConfigError(f"{sec}.{key}: {exc}", line, col) from None
    for k in ("c1", "c2", "d1", "d2"):
        if not getattr(h, k) >= 0:
            raise _error(text, f"hypotheses.{k} must be nonnegative", "hypotheses", k)

    s = cfg.solver
    for k in ("tol", "eps_start", "eps_end", "eigen_tol", "initial_amplitude"):
        if not getattr(s, k) > 0:
            raise _error(text, f"solver.{k} must be positive", "solver", k)
    if s.eps_end > s.eps_start:
        raise _error(text, "solver.eps_end must not exceed eps_start", "solver", "eps_end")
    for k in ("max_newton", "eps_stages"):
        if getattr(s, k) < 1:
            raise _error(text, f"solver.{k} must be at least 1", "solver", k)
    if s.initial not in ("bump", "zero"):
        raise _error(text, "solver.initial must be bump or zero", "solver", "initial")

    sm = cfg.sampling
    if sm.samples < 1:
        raise _error(text, "sampling.samples must be positive", "sampling", "samples")
    if not 0 < sm.min_magnitude < sm.max_magnitude:
        raise _error(text, "need 0 < min_magnitude < max_magnitude", "sampling", "min_magnitude")
    if not 0 <= sm.zero_fraction < 1:
        raise _error(text, "sampling.zero_fraction must lie in [0, 1)", "sampling", "zero_fraction")
    if sm.workers < 1:
        raise _error(text, "sampling.workers must be at least 1", "sampling", "workers")

    pr = cfg.probe
    if pr.points < 2:
        raise _error(text, "probe.points must be at least 2", "probe", "points")
    for k in ("t_min", "t_max"):
        v = getattr(pr, k)
        if v is not None and not v > 0:
            raise _error(text, f"probe.{k} must be positive", "probe", k)
    if pr.t_min is not None and pr.t_max is not None and not pr.t_min < pr.t_max:
        raise _error(text, "probe.t_min must be below t_max", "probe", "t_min")

    e = cfg.eigen
    if e.r is not None and not 1.0 < e.r <= 2.0:
        raise _error(text, "eigen.r must lie in (1, 2]", "eigen", "r")
    if not cfg.output.dir:
        raise _error(text, "output.dir must be nonempty", "output", "dir")


# ---------------------------------------------------------------- public API

def build_config(data: dict, text: Optional[str] = None) -> RunConfig:
    sections = {}
    for name, value in data.items():
        if name not in SECTIONS:
            line, col = _locate(text, name) if text is not None else (None, None)
            raise ConfigError(f"unknown section [{name}]", line, col)
        cls = type(SECTIONS[name]())
        sections[name] = _section(cls, value, name, text)
    cfg = RunConfig(**sections)
    _check(cfg, text)
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ConfigError(f"syntax error: {msg}", line, col) from None
    return build_config(data, text)


def to_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(cfg):
        sec = getattr(cfg, f.name)
        out[f.name] = {g.name: getattr(sec, g.name) for g in fields(sec)
                       if getattr(sec, g.name) is not None}
    return out


def serialize_config(cfg: RunConfig) -> str:
    """Canonical TOML form: every section, every set key, declaration order."""
    return tomli_w.dumps(to_dict(cfg))


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Set ``section.key`` values (strings are parsed as TOML scalars) and revalidate."""
    data = to_dict(cfg)
    for dotted, raw in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"override '{dotted}' must be section.key")
        sec, key = dotted.split(".", 1)
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}] in override '{dotted}'")
        value = raw
        if isinstance(raw, str):
            try:
                value = tomllib.loads(f"v = {raw}")["v"]
            except tomllib.TOMLDecodeError:
                value = raw
        data.setdefault(sec, {})[key] = value
    return build_config(data)


def default_config() -> RunConfig:
    return RunConfig()


__all__ = ["ConfigError", "RunConfig", "DomainConfig", "ProblemConfig", "ReactionConfig",
           "HypothesisConfig", "SolverConfig", "SamplingConfig", "ProbeConfig", "EigenConfig",
           "OutputConfig", "parse_config", "serialize_config", "apply_overrides", "build_config",
           "to_dict", "default_config"]
