from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ScalarProxKind(Enum):
    ABS = "abs"
    CHECK = "check"


class VectorProxKind(Enum):
    L0_NORM = "l0"
    SPARSITY_SET = "sparsity_set"


class MatrixProxKind(Enum):
    RANK_SET = "rank_set"
    RANK_FUNCTION = "rank_function"
    NUCLEAR_NORM = "nuclear_norm"


class ScalarProxSpec(BaseModel):
    kind: ScalarProxKind
    mu: float = Field(gt=0)
    q: Optional[float] = None

    @model_validator(mode="after")
    def validate_quantile_level(self):
        if self.kind is ScalarProxKind.CHECK and (self.q is None or not 0 < self.q < 1):
            raise ValueError("check function requires 0 < q < 1")
        return self


class VectorProxSpec(BaseModel):
    kind: VectorProxKind
    p: int = Field(ge=1)
    mu: Optional[float] = Field(default=None, gt=0)
    k: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def validate_constants(self):
        if self.kind is VectorProxKind.L0_NORM and self.mu is None:
            raise ValueError("l0 norm prox requires mu > 0")
        if self.kind is VectorProxKind.SPARSITY_SET:
            if self.k is None or self.k > self.p:
                raise ValueError(f"sparsity set requires 0 <= k <= p = {self.p}")
        return self


class MatrixProxSpec(BaseModel):
    kind: MatrixProxKind
    rows: int = Field(ge=1)
    cols: int = Field(ge=1)
    mu: Optional[float] = Field(default=None, gt=0)
    k: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def validate_constants(self):
        if self.kind is MatrixProxKind.RANK_SET:
            if self.k is None or self.k > min(self.rows, self.cols):
                raise ValueError("rank set requires 0 <= k <= min(rows, cols)")
        elif self.mu is None:
            raise ValueError(f"{self.kind.value} prox requires mu > 0")
        return self


class MMOptions(BaseModel):
    tol: float = Field(default=1e-6, gt=0)
    max_iter: int = Field(default=10000, ge=0)
    accelerate: bool = False
    trace_gradients: bool = False
    trace_path: Optional[str] = None

    model_config = ConfigDict(
        json_schema_extra={
            "example": {"tol": 1e-6, "max_iter": 10000, "accelerate": True}
        }
    )


class AnnealSchedule(BaseModel):
    lambda_init: float = Field(default=1.0, gt=0)
    growth: float = Field(default=1.2, gt=1)
    lambda_max: float = Field(default=1e8, gt=0)
    inner_tol: float = Field(default=1e-6, gt=0)
    outer_max: int = Field(default=200, ge=1)

    @model_validator(mode="after")
    def validate_range(self):
        if self.lambda_init > self.lambda_max:
            raise ValueError("lambda_init must not exceed lambda_max")
        return self


class QuantileSmoothing(Enum):
    CONVOLUTION = "convolution"
    MOREAU = "moreau"


class QuantileSpec(BaseModel):
    q: float = Field(gt=0, lt=1)
    mu: Optional[float] = Field(default=None, gt=0)
    smoothing: QuantileSmoothing = QuantileSmoothing.CONVOLUTION


class SparsityPenaltyKind(Enum):
    PROX_DISTANCE = "prox_distance"
    L0_MOREAU = "l0_moreau"


class SparsityPenalty(BaseModel):
    kind: SparsityPenaltyKind
    k: Optional[int] = Field(default=None, ge=0)
    anneal: AnnealSchedule = AnnealSchedule()
    lambda_: Optional[float] = Field(default=None, ge=0, alias="lambda")
    alpha: float = Field(default=0.01, gt=0)

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def validate_constants(self):
        if self.kind is SparsityPenaltyKind.PROX_DISTANCE and self.k is None:
            raise ValueError("proximal distance penalty requires k")
        if self.kind is SparsityPenaltyKind.L0_MOREAU and self.lambda_ is None:
            raise ValueError("l0 Moreau penalty requires lambda")
        return self


class NoiseFamily(Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"


class NoiseSpec(BaseModel):
    family: NoiseFamily = NoiseFamily.GAUSSIAN
    sd: float = Field(default=1.0, ge=0)
    df: float = Field(default=1.5, gt=0)


class ContaminationSpec(BaseModel):
    fraction: float = Field(default=0.1, ge=0, le=0.5)
    shift: float = 10.0


class SimResponse(Enum):
    QUANTILE = "quantile"
    SPARSE_QUANTILE = "sparse-quantile"
    L2E = "l2e"
    LOGISTIC = "logistic"
    MULTINOMIAL = "multinomial"
    LOWRANK_MULTINOMIAL = "lowrank-multinomial"
    ISOTONIC = "isotonic"


class SimSpec(BaseModel):
    n: int = Field(ge=1)
    p: int = Field(ge=1)
    rho: float = Field(default=0.7, ge=0, lt=1)
    noise: NoiseSpec = NoiseSpec()
    quantile_q: Optional[float] = Field(default=None, gt=0, lt=1)
    contamination: Optional[ContaminationSpec] = None
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    response: SimResponse = SimResponse.QUANTILE
    c: int = Field(default=3, ge=2)
    rank: int = Field(default=1, ge=1)

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "n": 500,
                "p": 50,
                "rho": 0.7,
                "noise": {"family": "gaussian", "sd": 1.0},
                "quantile_q": 0.7,
                "seed": 2024,
                "response": "sparse-quantile"
            }
        }
    )


class ModelName(Enum):
    LAD = "lad"
    QUANTILE = "quantile"
    SPARSE_QUANTILE_PD = "sparse-quantile-pd"
    SPARSE_QUANTILE_L0 = "sparse-quantile-l0"
    L2E = "l2e"
    ISOTONIC_L2E = "isotonic-l2e"
    LOGISTIC = "logistic"
    MULTINOMIAL = "multinomial"
    LOWRANK_MULTINOMIAL = "lowrank-multinomial"


# flags each model cannot run without
REQUIRED_FLAGS: Dict[ModelName, List[str]] = {
    ModelName.QUANTILE: ["q"],
    ModelName.SPARSE_QUANTILE_PD: ["q", "k"],
    ModelName.SPARSE_QUANTILE_L0: ["q", "lambda_"],
    ModelName.LOWRANK_MULTINOMIAL: ["lambda_"],
}


class FitConfig(BaseModel):
    model: ModelName
    data: str
    output: Optional[str] = None
    response: str = "y"
    intercept: bool = True
    q: Optional[float] = Field(default=None, gt=0, lt=1)
    mu: Optional[float] = Field(default=None, gt=0)
    k: Optional[int] = Field(default=None, ge=0)
    lambda_: Optional[float] = Field(default=None, ge=0, alias="lambda")
    alpha: float = Field(default=0.01, gt=0)
    c: Optional[int] = Field(default=None, ge=2)
    smoothing: QuantileSmoothing = QuantileSmoothing.CONVOLUTION
    seed: int = Field(default=0, ge=0)
    anneal: AnnealSchedule = AnnealSchedule()
    opts: MMOptions = MMOptions()

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def validate_hyperparameters(self):
        for name in REQUIRED_FLAGS.get(self.model, []):
            if getattr(self, name) is None:
                flag = name.rstrip("_")
                raise ValueError(f"model '{self.model.value}' requires --{flag}")
        return self

    def sparsity_penalty(self) -> Optional[SparsityPenalty]:
        """Penalty of the two sparse quantile models; None for every other model."""
        if self.model is ModelName.SPARSE_QUANTILE_PD:
            return SparsityPenalty(kind=SparsityPenaltyKind.PROX_DISTANCE, k=self.k, anneal=self.anneal)
        if self.model is ModelName.SPARSE_QUANTILE_L0:
            return SparsityPenalty(kind=SparsityPenaltyKind.L0_MOREAU, lambda_=self.lambda_, alpha=self.alpha)
        return None


class MetricsReport(BaseModel):
    tpr: float = Field(ge=0, le=1)
    fpr: float = Field(ge=0, le=1)
    ee: float = Field(ge=0)
    pe: float = Field(ge=0)
    time_seconds: Optional[float] = None
    iterations: Optional[int] = None
    factorizations: Optional[int] = None


class FitReport(BaseModel):
    schema_version: int = Field(default=1, alias="schema")
    model: ModelName
    coef: Any
    objective: float
    iterations: int
    converged: bool
    factorizations: int
    restarts: int = 0
    diagnostics: Dict[str, Any] = {}
    extras: Dict[str, Any] = {}
    config: Dict[str, Any] = {}
    time_seconds: Optional[float] = None

    model_config = ConfigDict(populate_by_name=True)

    @field_validator("objective")
    @classmethod
    def validate_objective(cls, value: float):
        if value != value:
            raise ValueError("objective must not be NaN")
        return value
