# schemas.py
import math
from datetime import datetime
from typing import Any, ClassVar, Optional

from pydantic import BaseModel, ConfigDict, Field, SerializationInfo, field_serializer, field_validator, model_validator

from .config import DEFAULT_N_BOOT, DEFAULT_PENALTY_SCALE, DEFAULT_THETAS, GAS_INSTABILITY_FACTOR
from .models import GasVariant, Innovation, LossVariant, ModelName, RunKind, RunStatus, SpecKind
from .utils import parse_period, validate_theta


class EstimationConfig(BaseModel):

    model_config = ConfigDict(use_enum_values=True,
                              from_attributes=True,
                              populate_by_name=True,
                              validate_default=True,
                              frozen=True)

    n_starts: int = Field(100, ge=1, description="Random initial candidates per multistart run")
    n_keep: int = Field(3, ge=1, description="Best candidates kept for local refinement")
    n_chained: int = Field(6, ge=1, description="Sequential local runs per kept candidate")
    lambda_r: Optional[float] = Field(
        None, ge=0, description="Residual sign penalty weight; defaults to 10/T_train")
    lambda_q: Optional[float] = Field(
        None, ge=0, description="VaR non-positivity penalty weight; defaults to 10/T_train")
    lambda_e: Optional[float] = Field(
        None, ge=0, description="Monotonicity penalty weight; defaults to 10/T_train")
    prefix_fraction: float = Field(
        0.10, gt=0, le=1, description="Share of the training segment used for empirical seeds")
    seed: int = Field(0, description="Master seed of every random draw")
    max_iter: int = Field(2000, ge=1, description="Iterations per local run")
    tol: float = Field(1e-8, gt=0, description="Objective and step tolerance of a local run")
    loss_variant: LossVariant = Field(LossVariant.BOTH, description="CAESar training losses",
                                      examples=["BOTH", "BARRERA_ONLY", "PATTON_ONLY"])
    no_cross: bool = Field(False, description="Force the VaR/ES cross coefficients to zero")
    bound: float = Field(100.0, gt=0, description="Box half-width for every coefficient")
    uniform_fraction: float = Field(
        0.5, ge=0, le=1, description="Share of random candidates drawn uniform on [-1, 1]")
    n_jobs: int = Field(1, ge=1, description="Worker threads for candidates and sub-fits")

    @model_validator(mode="after")  # type: ignore
    def check_keep(cls, values: "EstimationConfig"):
        if values.n_keep > values.n_starts:
            raise ValueError("n_keep cannot exceed n_starts.")
        return values

    def penalties(self, n_train: int) -> tuple[float, float, float]:
        """Resolved (lambda_r, lambda_q, lambda_e) for a training segment of length n_train."""
        default = DEFAULT_PENALTY_SCALE / max(n_train, 1)
        return (
            default if self.lambda_r is None else self.lambda_r,
            default if self.lambda_q is None else self.lambda_q,
            default if self.lambda_e is None else self.lambda_e,
        )


class SpecSchema(BaseModel):

    model_config = ConfigDict(use_enum_values=True,
                              from_attributes=True,
                              populate_by_name=True,
                              validate_default=True)

    kind: SpecKind = Field(SpecKind.AS, description="Regressor map", examples=["AS", "SAV", "IG"])
    p: int = Field(1, ge=1, description="Observation lags")
    u: int = Field(1, ge=1, description="Estimate lags")


class CaviarModelSchema(SpecSchema):

    theta: float = Field(..., gt=0, lt=1, examples=[0.05, 0.025, 0.01])
    beta: list[float] = Field(..., description="Coefficients (1 + p*d + u)")
    q0: float = Field(..., description="Initial VaR value")
    fit_loss: float = Field(..., description="In-sample pinball loss")
    degenerate: bool = Field(False, description="Fit skipped on a constant series")


class StepLossesSchema(BaseModel):

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    step1_pinball: float
    step2_penalized_r: Optional[float] = None
    step3_start: Optional[float] = Field(
        None, description="Penalized joint loss at the lifted starting point")
    step3_penalized_joint: Optional[float] = None


class CaesarModelSchema(BaseModel):

    model_config = ConfigDict(use_enum_values=True,
                              from_attributes=True,
                              populate_by_name=True)

    spec: SpecSchema = Field(default_factory=SpecSchema)
    theta: float = Field(..., gt=0, lt=1, examples=[0.05, 0.025, 0.01])
    beta: list[float] = Field(..., description="VaR equation coefficients (1 + p*d + 2u)")
    gamma: list[float] = Field(..., description="ES equation coefficients (1 + p*d + 2u)")
    q0: float
    e0: float
    step_losses: Optional[StepLossesSchema] = None
    config_echo: dict[str, Any] = Field(default_factory=dict)
    degenerate: bool = False

    @model_validator(mode="after")  # type: ignore
    def check_lengths(cls, values: "CaesarModelSchema"):
        if len(values.beta) != len(values.gamma):
            raise ValueError("beta and gamma must have the same length.")
        return values


class Gas1ParamsSchema(BaseModel):

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    a: float = Field(..., lt=0, description="VaR loading of e^{k_t}")
    b: float = Field(..., lt=0, description="ES loading of e^{k_t}, below a")
    beta: float = Field(..., description="Factor persistence")
    gamma: float = Field(..., description="Score weight")
    k0: float = Field(0.0, description="Initial factor")

    @model_validator(mode="after")  # type: ignore
    def check_order(cls, values: "Gas1ParamsSchema"):
        if not values.b < values.a:
            raise ValueError("GAS1 requires b < a < 0.")
        return values


class Gas2ParamsSchema(BaseModel):

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    w: list[float] = Field(..., min_length=2, max_length=2)
    b1: float
    b2: float
    A: list[list[float]] = Field(..., description="2x2 score loading matrix")
    q_init: float
    e_init: float


class GasModelSchema(BaseModel):

    model_config = ConfigDict(use_enum_values=True,
                              from_attributes=True,
                              populate_by_name=True)

    variant: GasVariant = Field(..., examples=["ONE", "TWO"])
    theta: float = Field(..., gt=0, lt=1)
    gas1: Optional[Gas1ParamsSchema] = None
    gas2: Optional[Gas2ParamsSchema] = None
    fit_loss: float
    unstable: bool = False
    degenerate: bool = False


class KCaviarModelSchema(BaseModel):

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    theta: float = Field(..., gt=0, lt=1)
    thetas: list[float] = Field(..., description="Equispaced tail partition j*theta/n")
    models: list[CaviarModelSchema]


class GarchParams(BaseModel):

    model_config = ConfigDict(use_enum_values=True,
                              from_attributes=True,
                              populate_by_name=True,
                              validate_default=True,
                              frozen=True)

    omega: float = Field(..., gt=0, description="Variance intercept")
    alpha: float = Field(..., ge=0, description="Weight on the squared lagged return")
    beta_g: float = Field(..., ge=0, description="Weight on the lagged variance")
    innovation: Innovation = Field(Innovation.NORMAL, examples=["NORMAL", "STUDENT"])
    nu: Optional[float] = Field(None, description="Student-t degrees of freedom")

    @model_validator(mode="after")  # type: ignore
    def check_stationarity(cls, values: "GarchParams"):
        if values.alpha + values.beta_g >= 1:
            raise ValueError("GARCH requires alpha + beta_g < 1.")
        if Innovation(values.innovation) is Innovation.STUDENT:
            if values.nu is None or values.nu <= 2:
                raise ValueError("Student innovations require nu > 2.")
        return values

    @property
    def unconditional_variance(self) -> float:
        return self.omega / (1.0 - self.alpha - self.beta_g)


class DgpSchema(BaseModel):

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    name: str = Field(..., examples=["NORMAL-I", "STUDENT-III"])
    params: GarchParams
    stand_in: bool = Field(True, description="Coefficients are representative, not fitted")


class _ExperimentBase(BaseModel):

    model_config = ConfigDict(use_enum_values=True,
                              from_attributes=True,
                              populate_by_name=True,
                              validate_default=True)

    models: list[ModelName] = Field(
        default_factory=lambda: [ModelName.CAESAR, ModelName.CAVIAR, ModelName.KCAVIAR,
                                 ModelName.GAS1, ModelName.GAS2],
        min_length=1)
    thetas: list[float] = Field(default_factory=lambda: list(DEFAULT_THETAS), min_length=1)
    spec: SpecSchema = Field(default_factory=SpecSchema)
    estimation: EstimationConfig = Field(default_factory=EstimationConfig)
    kcaviar_n: int = Field(10, ge=1, description="Quantiles averaged by K-CAViaR")
    gas_instability_factor: float = Field(GAS_INSTABILITY_FACTOR, gt=0)
    seed: int = 0
    output_dir: str = "results"
    n_jobs: int = Field(1, ge=1, description="Worker threads over experiment cells")

    @field_validator("thetas")
    def check_thetas(cls, value: list[float]) -> list[float]:
        return [validate_theta(v) for v in value]


class ExperimentConfig(_ExperimentBase):

    data: list[str] = Field(default_factory=list, description="CSV files, one asset each")
    window: str | int = Field("7y", description="Fold length", examples=["7y", 1764])
    train: str | int = Field("6y", description="Training part of each fold", examples=["6y"])
    stride: str | int = Field("1y", description="Shift between folds", examples=["1y"])
    n_boot: int = Field(DEFAULT_N_BOOT, ge=1)
    percentage_returns: bool = Field(
        True, description="Scale returns by 100 before fitting (Patton-loss tables convention)")

    @property
    def fold_sizes(self) -> tuple[int, int, int]:
        return parse_period(self.window), parse_period(self.train), parse_period(self.stride)


class SimulationConfig(_ExperimentBase):

    n_series: int = Field(20, ge=1)
    T: int = Field(1750, ge=2)
    split: int = Field(1500, ge=1)
    dgps: Optional[list[DgpSchema]] = None

    @model_validator(mode="after")  # type: ignore
    def check_split(cls, values: "SimulationConfig"):
        if values.split >= values.T:
            raise ValueError("split must be smaller than T.")
        return values


class TestReport(BaseModel):

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    __test__: ClassVar[bool] = False

    name: str = Field(..., examples=["MNF", "AS-Z1", "AS-Z2", "DM", "NB", "LD", "ENC"])
    statistic: float
    p_value: float = Field(..., ge=0, le=1)
    n_boot: int = Field(0, ge=0, description="0 for analytic tests")
    reject_at_5pct: bool
    diagnostics: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")  # type: ignore
    def check_decision(cls, values: "TestReport"):
        if values.reject_at_5pct != (values.p_value < 0.05):
            raise ValueError("Rejection flag inconsistent with the p-value.")
        return values

    @field_serializer("statistic", when_used="json")
    def serialize_statistic(self, statistic: float, info: SerializationInfo) -> Any:
        return statistic if math.isfinite(statistic) else str(statistic)


class EvaluationRow(BaseModel):

    model_config = ConfigDict(use_enum_values=True,
                              from_attributes=True,
                              populate_by_name=True,
                              protected_namespaces=())

    model: str
    asset: str = Field(..., description="Asset name or DGP id")
    fold: int = Field(..., description="Fold index or series index")
    theta: float
    mae: Optional[float] = None
    rmse: Optional[float] = None
    barrera: Optional[float] = None
    patton: Optional[float] = None
    pinball: Optional[float] = None
    violation_rate: Optional[float] = None
    monotonicity_violation_rate: Optional[float] = None
    unstable: bool = False
    error: Optional[str] = None
    model_hash: Optional[str] = None
    config_hash: str
    seed: int


class RunSchema(BaseModel):

    model_config = ConfigDict(use_enum_values=True,
                              from_attributes=True,
                              populate_by_name=True)

    run_corr_id: str = Field(..., description="ULID run identifier",
                             examples=["01F8MECHZX3TBDSZ7XRADM79XV"])
    kind: RunKind
    status: RunStatus
    config_hash: str
    seed: int
    units: str
    n_failures: int
    timestamp: datetime

    @field_serializer("timestamp", when_used="json")
    def serialize_timestamp(self, timestamp: datetime, info: SerializationInfo) -> str:
        return timestamp.isoformat()


class BacktestRecordSchema(BaseModel):

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    model: str
    asset: str
    fold: int
    theta: float
    test: str
    statistic: float
    p_value: float
    reject: bool


class JointStateSchema(BaseModel):

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    y: list[float] = Field(..., min_length=1, description="Recent returns, oldest first")
    q: list[float] = Field(..., min_length=1, description="Recent VaR estimates, oldest first")
    e: list[float] = Field(..., min_length=1, description="Recent ES estimates, oldest first")


class ForecastRequest(BaseModel):

    model: CaesarModelSchema
    state: JointStateSchema


class ForecastResponse(BaseModel):

    q_next: float
    e_next: float


class BacktestRequest(BaseModel):

    y: list[float] = Field(..., min_length=2)
    q: list[float] = Field(..., min_length=2)
    e: list[float] = Field(..., min_length=2)
    theta: float = Field(..., gt=0, lt=1)
    n_boot: int = Field(DEFAULT_N_BOOT, ge=1)
    seed: int = 0

    @model_validator(mode="after")  # type: ignore
    def check_lengths(cls, values: "BacktestRequest"):
        if not len(values.y) == len(values.q) == len(values.e):
            raise ValueError("y, q and e must have the same length.")
        return values
