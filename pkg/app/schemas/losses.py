from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import ConfigurationError

TERM_ORDER = (
    "kl",
    "kl_pert",
    "ce",
    "ce_pert",
    "cosine",
    "ortho",
    "var",
    "pix",
    "grad",
)

WEIGHT_FOR_TERM = {
    "kl": "alpha",
    "kl_pert": "alpha_p",
    "ce": "beta",
    "ce_pert": "beta_p",
    "cosine": "gamma",
    "ortho": "delta",
    "var": "eta1",
    "pix": "eta2",
    "grad": "eta3",
}

RECONSTRUCTION_ONLY = ("alpha_p", "beta_p", "eta1", "eta2", "eta3")


class LossWeights(BaseModel):
    alpha: float = Field(default=1.0, ge=0.0)
    alpha_p: float = Field(default=0.0, ge=0.0)
    beta: float = Field(default=1.0, ge=0.0)
    beta_p: float = Field(default=0.0, ge=0.0)
    gamma: float = Field(default=0.1, ge=0.0)
    delta: float = Field(default=0.1, ge=0.0)
    eta1: float = Field(default=0.0, ge=0.0)
    eta2: float = Field(default=0.0, ge=0.0)
    eta3: float = Field(default=0.0, ge=0.0)

    model_config = ConfigDict(extra="forbid", frozen=True)

    @classmethod
    def for_reconstruction(cls, **overrides: float) -> "LossWeights":
        values = dict(
            alpha_p=1.0, beta_p=1.0, eta1=1e-4, eta2=1.0, eta3=1e-3
        )
        values.update(overrides)
        return cls(**values)

    @property
    def is_inversion(self) -> bool:
        return all(getattr(self, name) == 0.0 for name in RECONSTRUCTION_ONLY)

    def require_inversion(self) -> None:
        if not self.is_inversion:
            active = [name for name in RECONSTRUCTION_ONLY if getattr(self, name) != 0.0]
            raise ConfigurationError(
                f"Inversion requires zero reconstruction weights, got non-zero: {', '.join(active)}"
            )

    def weight_of(self, term: str) -> float:
        return getattr(self, WEIGHT_FOR_TERM[term])


class LossBreakdown(BaseModel):
    """Невзвешенные значения всех слагаемых и взвешенная сумма."""

    kl: float = 0.0
    kl_pert: float = 0.0
    ce: float = 0.0
    ce_pert: float = 0.0
    cosine: float = 0.0
    ortho: float = 0.0
    var: float = 0.0
    pix: float = 0.0
    grad: float = 0.0
    total: float = 0.0

    def terms(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in TERM_ORDER}

    def recompose(self, weights: LossWeights) -> float:
        total = 0.0
        for name in TERM_ORDER:
            total += weights.weight_of(name) * getattr(self, name)
        return total


class PerturbationConfig(BaseModel):
    epsilon: float = Field(default=0.05, ge=0.0, le=0.5)
    seed: int = 0

    model_config = ConfigDict(extra="forbid", frozen=True)


class MetricRecord(BaseModel):
    """Одна строка metrics.jsonl."""

    step: int
    objective: str
    breakdown: LossBreakdown
    label_agreement: Optional[float] = None
    mean_confidence: Optional[float] = None
    nn_l2_mean: Optional[float] = None
