"""
Shared Data Models
Pydantic bases for array-carrying domain types and the parameter sets used across services.
"""

import math
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# ============================================================
# UTILITIES & VALIDATORS
# ============================================================


def frozen_array(v: Any, dtype: Any = float) -> np.ndarray:
    """Copy into a read-only numpy array"""
    arr = np.array(v, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class CoreModel(BaseModel):
    """Base model with shared configuration"""

    model_config = ConfigDict(extra="ignore")


class ArrayModel(BaseModel):
    """Immutable model holding numpy arrays; safe to share between workers"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ============================================================
# PARAMETER MODELS
# ============================================================

WARN_DELTA = 1e-3


class HierarchyParams(CoreModel):
    """Random nested grid construction"""

    delta: float = Field(0.25, gt=0.0, le=0.25)
    levels: int = Field(3, ge=0, le=40)
    seed: int = 0


class GoodnessParams(CoreModel):
    """Good/bad cube classification and really-good equalization"""

    gamma: float = Field(0.25, gt=0.0, lt=1.0)
    r: int = Field(2, ge=1)
    eps_cz: float = Field(1.0, gt=0.0, le=1.0)
    lambda_doubling: float = Field(2.0, ge=1.0)
    a: float = Field(0.5, ge=0.0, le=1.0)
    eta: float | None = Field(None, ge=0.0)

    @classmethod
    def derive(
        cls,
        eps_cz: float,
        lambda_doubling: float,
        r: int,
        a: float,
        delta: float,
    ) -> "GoodnessParams":
        """gamma = eps / (2 (eps + log2 C)) and eta = log(1 - a) / log(delta)"""
        gamma = eps_cz / (2.0 * (eps_cz + math.log2(lambda_doubling)))
        eta = math.log1p(-a) / math.log(delta) if a < 1.0 else math.inf
        return cls(gamma=gamma, r=r, eps_cz=eps_cz, lambda_doubling=lambda_doubling, a=a, eta=eta)

    def threshold(self, delta: float, k: int, n: int) -> float:
        """Goodness distance delta^{k gamma} delta^{n (1 - gamma)}"""
        return delta ** (k * self.gamma + n * (1.0 - self.gamma))


class BellmanParams(CoreModel):
    """B_Q(x, y) = x^alpha y^alpha on 1 < xy <= Q"""

    alpha: float = Field(0.25, gt=0.0, lt=0.5)
    Q: float = Field(10.0, ge=1.0)

    @model_validator(mode="after")
    def _finite(self) -> "BellmanParams":
        if not math.isfinite(self.Q):
            raise ValueError("Q must be finite")
        return self
