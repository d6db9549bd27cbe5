"""Strict JSON schema for experiment configs."""

import hashlib
import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .catalog import CATALOG, parse_problem
from .exceptions import ConfigurationError
from .solver import SolverConfig

COMMANDS = ("verify-tanaka", "check-assumptions", "solve", "estimates", "cauchy",
            "convergence", "uniqueness")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemModel(_Strict):
    name: str = "linear_drift"
    params: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="before")
    @classmethod
    def _from_string(cls, data):
        if isinstance(data, str):
            name, params = parse_problem(data)
            if "__positional__" in params:
                raise ValueError("use keyword arguments, e.g. linear_drift(a=2)")
            return {"name": name, "params": params}
        return data

    @field_validator("name")
    @classmethod
    def _known(cls, name):
        if name not in CATALOG:
            raise ValueError(f"unknown problem {name!r}; known: {', '.join(CATALOG)}")
        return name


class GridModel(_Strict):
    T: float = Field(1.0, gt=0)
    N: int = Field(64, ge=1)


class MonteCarloModel(_Strict):
    M: int = Field(10_000, ge=1)
    b_path_count: int = Field(1, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)


class SolverModel(_Strict):
    scheme: Literal["explicit", "implicit_picard"] = "explicit"
    picard_max_iters: int = Field(20, ge=1)
    picard_tol: float = Field(1e-10, gt=0)
    picard_init: Literal["explicit", "zero"] = "explicit"
    basis_degree: int = Field(1, ge=0)
    nested_inner: int = Field(8, ge=2)
    ridge: float = Field(1e-10, ge=0)
    regression_seed: Optional[int] = Field(None, ge=0)
    stderr_batches: int = Field(10, ge=0)
    frozen_b_index: int = Field(0, ge=0)


class TanakaModel(_Strict):
    case: Literal["classical", "generic"] = "generic"
    epsilon: float = Field(0.1, ge=0)
    N_list: list[int] = Field(default_factory=lambda: [64, 128, 256])


class AssumptionsModel(_Strict):
    count: int = Field(10_000, ge=1)
    seed: int = Field(0, ge=0)
    y_range: tuple[float, float] = (-5.0, 5.0)
    z_range: tuple[float, float] = (-5.0, 5.0)
    tol: float = Field(1e-9, ge=0)


class SolveModel(_Strict):
    export_paths: int = Field(100, ge=0)


class EstimatesModel(_Strict):
    kappa: float = Field(1.0, gt=0)
    N_list: list[int] = Field(default_factory=lambda: [32, 64, 128])


class CauchyModel(_Strict):
    n_values: list[float] = Field(default_factory=lambda: [2.0, 4.0, 8.0, 16.0])
    k_sigma: float = Field(3.0, gt=0)


class ConvergenceModel(_Strict):
    N_list: list[int] = Field(default_factory=lambda: [16, 32, 64, 128])


class UniquenessModel(_Strict):
    scheme: Optional[Literal["explicit", "implicit_picard"]] = "implicit_picard"
    regression_seed: Optional[int] = Field(None, ge=0)
    picard_init: Optional[Literal["explicit", "zero"]] = None
    refine_bias: bool = True
    k_sigma: float = Field(3.0, gt=0)


class ExperimentConfig(_Strict):
    command: Literal[COMMANDS]
    problem: ProblemModel = Field(default_factory=ProblemModel)
    grid: GridModel = Field(default_factory=GridModel)
    monte_carlo: MonteCarloModel = Field(default_factory=MonteCarloModel)
    solver: SolverModel = Field(default_factory=SolverModel)
    p: float = Field(2.0, gt=0)
    output_dir: str = "bdsde_output"
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])
    tanaka: TanakaModel = Field(default_factory=TanakaModel)
    assumptions: AssumptionsModel = Field(default_factory=AssumptionsModel)
    solve: SolveModel = Field(default_factory=SolveModel)
    estimates: EstimatesModel = Field(default_factory=EstimatesModel)
    cauchy: CauchyModel = Field(default_factory=CauchyModel)
    convergence: ConvergenceModel = Field(default_factory=ConvergenceModel)
    uniqueness: UniquenessModel = Field(default_factory=UniquenessModel)

    def solver_config(self, **overrides):
        fields = {**self.solver.model_dump(), "paths_M": self.monte_carlo.M,
                  "b_path_count": self.monte_carlo.b_path_count, **overrides}
        return SolverConfig(**fields)

    def config_hash(self):
        """sha256 of the canonical resolved config, ``output_dir`` excluded."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _describe(error):
    first = error.errors()[0]
    loc = ".".join(str(part) for part in first["loc"])
    if first["type"] == "extra_forbidden":
        return f"unknown key '{loc}'"
    return f"{loc}: {first['msg']}" if loc else first["msg"]


def parse_config(data, *, output_dir=None, seed=None):
    """Validate a config mapping and apply command-line overrides."""
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    data = dict(data)
    if output_dir is not None:
        data["output_dir"] = str(output_dir)
    if seed is not None:
        mc = data.get("monte_carlo", {})
        if not isinstance(mc, dict):
            raise ConfigurationError("monte_carlo must be an object")
        data["monte_carlo"] = {**mc, "master_seed": seed}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_describe(exc)) from None


def load_config(path, **overrides):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(data, **overrides)
