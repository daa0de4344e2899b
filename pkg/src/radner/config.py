"""Scenario configuration: strict JSON schema and conversion to solver inputs."""

from __future__ import annotations

import json
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, field_validator, model_validator

from . import endowments
from .agents import Population, RiskAwarePopulation, reparametrize
from .errors import ValidationError
from .lattice import build_tree, path_budget


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Affine(_Strict):
    type: Literal["affine"]
    a: float = 0.0
    b: float = 0.0


class TerminalFunction(_Strict):
    type: Literal["terminal-function"]
    grid_b: List[float]
    grid_w: List[float]
    values: List[List[float]]
    extrapolation: Literal["clamp", "error"] = "clamp"


class PathTable(_Strict):
    type: Literal["path-table"]
    values: List[float]


class Functional1D(_Strict):
    coef: Optional[float] = None
    grid: Optional[List[float]] = None
    values: Optional[List[float]] = None

    @model_validator(mode="after")
    def _one_form(self):
        table = self.grid is not None or self.values is not None
        if self.coef is not None and table:
            raise ValueError("give either coef or grid/values, not both")
        if self.coef is None and (self.grid is None or self.values is None):
            raise ValueError("need coef, or both grid and values")
        if self.grid is not None and self.values is not None and len(self.grid) != len(self.values):
            raise ValueError("grid and values lengths differ")
        return self


class Separable(_Strict):
    type: Literal["separable"]
    b: Functional1D = Field(default_factory=lambda: Functional1D(coef=0.0))
    w: Functional1D = Field(default_factory=lambda: Functional1D(coef=0.0))


Endowment = Annotated[Union[Affine, TerminalFunction, PathTable, Separable], Field(discriminator="type")]


class Agent(_Strict):
    delta: float = Field(gt=0, allow_inf_nan=False)
    endowment: Endowment


class SolverOptions(_Strict):
    method: Literal["picard", "direct"] = "picard"
    tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(200, ge=0)
    lambda0: float = 0.0


class CertificateOptions(_Strict):
    kappa: Optional[float] = None
    chi0: Optional[float] = Field(None, ge=0, lt=0.5)
    delta0: Optional[float] = Field(None, gt=0)

    @field_validator("kappa")
    @classmethod
    def _kappa(cls, v):
        if v is not None and not v > 2:
            raise ValueError("kappa must exceed 2")
        return v


class StudyOptions(_Strict):
    steps: List[int] = Field(default_factory=lambda: [4, 8, 16, 32])

    @field_validator("steps")
    @classmethod
    def _steps(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("steps must be a non-empty list of positive integers")
        return v


class OracleOptions(_Strict):
    steps: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])

    @field_validator("steps")
    @classmethod
    def _steps(cls, v):
        if not v or any(n < 1 or n > 4 for n in v):
            raise ValueError("oracle steps must lie in 1..4")
        return v


class ScenarioConfig(_Strict):
    horizon: float = Field(gt=0, allow_inf_nan=False)
    steps: int = Field(ge=1)
    lattice: Literal["auto", "full", "recombining"] = "auto"
    agents: List[Agent] = Field(min_length=1)
    xi_c: Optional[Endowment] = None
    solver: SolverOptions = Field(default_factory=SolverOptions)
    certificate: CertificateOptions = Field(default_factory=CertificateOptions)
    convergence_study: StudyOptions = Field(default_factory=StudyOptions)
    oracle_compare: OracleOptions = Field(default_factory=OracleOptions)


def _format_loc(loc) -> str:
    parts = []
    for item in loc:
        if isinstance(item, int):
            parts.append(f"[{item}]")
        elif item in ("affine", "terminal-function", "path-table", "separable"):
            continue  # union tag, not a user-visible field
        else:
            parts.append(("." if parts else "") + str(item))
    return "".join(parts) or "<root>"


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a JSON scenario; all violations are reported at once."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        msg = f"line {exc.lineno}, column {exc.colno}: {exc.msg}"
        raise ValidationError(f"config is not valid JSON ({msg})", [msg]) from None
    try:
        return ScenarioConfig.model_validate(data)
    except PydanticError as exc:
        problems = [f"{_format_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ValidationError(f"config has {len(problems)} problem(s)", problems) from None


def make_tree(cfg: ScenarioConfig, steps: int | None = None):
    N = cfg.steps if steps is None else steps
    kind = cfg.lattice
    has_paths = any(a.endowment.type == "path-table" for a in cfg.agents) or (
        cfg.xi_c is not None and cfg.xi_c.type == "path-table"
    )
    if kind == "auto":
        kind = "full" if 4**N <= path_budget() or has_paths else "recombining"
    if kind == "recombining" and has_paths:
        raise ValidationError("path-table endowments need the full lattice")
    return build_tree(cfg.horizon, N, recombining=(kind == "recombining"))


def evaluate_endowment(tree, spec) -> np.ndarray:
    if spec.type == "affine":
        return endowments.affine(tree, spec.a, spec.b)
    if spec.type == "terminal-function":
        return endowments.tabulated(tree, spec.grid_b, spec.grid_w, spec.values, spec.extrapolation)
    if spec.type == "path-table":
        return endowments.path_table(tree, spec.values)
    B, W = tree.state(tree.N)
    return (endowments.functional_1d(B, spec.b.coef, spec.b.grid, spec.b.values)
            + endowments.functional_1d(W, spec.w.coef, spec.w.grid, spec.w.values))


def separable_parts(tree, cfg: ScenarioConfig):
    """``(G^B, G^W)`` in risk units when every agent has an affine or separable spec."""
    B, W = tree.state(tree.N)
    gb, gw = [], []
    for agent in cfg.agents:
        e = agent.endowment
        if e.type == "affine":
            gb.append(e.a * B)
            gw.append(e.b * W)
        elif e.type == "separable":
            gb.append(endowments.functional_1d(B, e.b.coef, e.b.grid, e.b.values))
            gw.append(endowments.functional_1d(W, e.w.coef, e.w.grid, e.w.values))
        else:
            return None
    delta = np.array([a.delta for a in cfg.agents])[:, None]
    return np.array(gb) / delta, np.array(gw) / delta


def build_population(cfg: ScenarioConfig, tree) -> RiskAwarePopulation:
    problems = []
    rows = []
    for i, agent in enumerate(cfg.agents):
        try:
            rows.append(evaluate_endowment(tree, agent.endowment))
        except ValidationError as exc:
            problems.append(f"agents[{i}].endowment: {exc}")
    if problems:
        raise ValidationError(f"{len(problems)} endowment problem(s)", problems)
    pop = Population(tree, [a.delta for a in cfg.agents], np.array(rows))
    return reparametrize(pop)


def xi_candidate(cfg: ScenarioConfig, tree):
    if cfg.xi_c is None:
        return None
    return evaluate_endowment(tree, cfg.xi_c)

