"""Causal models mapping an assignment to a multiplicative outcome shift.

Potential outcomes follow ``y_i(z) = y_i(0) * exp(F_i(z; theta))``. The only
model-specific piece is :func:`shift`; the two mappings between observed and
uniformity-trial outcomes are generic over it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .interference import InterferenceMatrix, check_denominators, treated_counts


class ModelKind(str, enum.Enum):
    ADD = "add"
    BFP = "bfp"


class ExposureKind(str, enum.Enum):
    """Which neighbor summary enters the model and the working AFT design."""

    PROPORTION = "G"
    PROPORTION_STAR = "Gstar"
    COUNT = "T"


@dataclass(frozen=True)
class Theta:
    delta: float
    tau: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delta) and math.isfinite(self.tau)):
            raise ValueError(f"theta must be finite, got ({self.delta}, {self.tau})")


@dataclass(frozen=True)
class CausalModel:
    kind: ModelKind
    exposure: ExposureKind

    @property
    def name(self) -> str:
        return f"{self.kind.value}-{self.exposure.value}"

    @property
    def needs_denominators(self) -> bool:
        return self.exposure is ExposureKind.PROPORTION_STAR


MODEL_NAMES = ("add-G", "add-Gstar", "add-T", "bfp-T", "bfp-G")


def parse_model(name: str) -> CausalModel:
    """Parse ``add-G``, ``add-Gstar``, ``add-T``, ``bfp-T``, ``bfp-G``.

    A bare ``add`` or ``bfp`` picks the default exposure (proportion for the
    additive model, count for BFP).
    """
    key = name.strip()
    if key == "add":
        key = "add-G"
    elif key == "bfp":
        key = "bfp-T"
    if key not in MODEL_NAMES:
        raise ValueError(f"unknown causal model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    kind, exp = key.split("-")
    return CausalModel(ModelKind(kind), ExposureKind(exp))


ADD_G = parse_model("add-G")
BFP_T = parse_model("bfp-T")


def shift(model: CausalModel, theta: Theta, z, e):
    """Evaluate ``F`` for treatment ``z`` and exposure ``e`` (elementwise).

    ADD: ``delta*z + tau*e``.
    BFP: ``delta + log(1 + (1 - z)(exp(-delta) - 1) exp(-tau^2 e))``.
    """
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if model.kind is ModelKind.ADD:
        out = theta.delta * z + theta.tau * e
    else:
        inner = (1.0 - z) * math.expm1(-theta.delta) * np.exp(-(theta.tau**2) * e)
        if np.any(inner <= -1.0):
            raise FloatingPointError("BFP shift: log argument is nonpositive")
        out = theta.delta + np.log1p(inner)
    return out if out.ndim else float(out)


def exposure_values(
    model: CausalModel, A: InterferenceMatrix, Z: np.ndarray, B: np.ndarray | None = None
) -> np.ndarray:
    """The exposure used by ``model`` for one assignment or a stack of them.

    ``Z`` may be ``(n,)`` or ``(k, n)``; the result has the same shape.
    """
    Z = np.asarray(Z)
    T = treated_counts(A, Z.reshape(-1, A.n)).reshape(Z.shape)
    if model.exposure is ExposureKind.COUNT:
        return T
    if model.exposure is ExposureKind.PROPORTION_STAR:
        if B is None:
            raise ValueError(f"model {model.name} needs participation denominators B")
        denom = check_denominators(A, B)
    else:
        denom = A.row_sums.astype(np.float64)
    out = np.zeros_like(T)
    np.divide(T, denom, out=out, where=np.broadcast_to(denom > 0, T.shape))
    return out


def _check_positive(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(x > 0):
        i = int(np.argmax(~(x > 0)))
        raise ValueError(f"{what} must be strictly positive; entry {i} is {x.flat[i]!r}")
    return x


def to_uniformity(Y, Z, A: InterferenceMatrix, model: CausalModel, theta0: Theta, B=None) -> np.ndarray:
    """Uniformity-trial outcomes implied by observed ``Y`` under ``theta0``."""
    Y = _check_positive(Y, "observed times")
    e = exposure_values(model, A, Z, B)
    return Y * np.exp(-shift(model, theta0, Z, e))


def from_uniformity(y0, z, A: InterferenceMatrix, model: CausalModel, theta0: Theta, B=None) -> np.ndarray:
    """Potential outcomes under assignment ``z`` given uniformity outcomes."""
    y0 = _check_positive(y0, "uniformity times")
    e = exposure_values(model, A, z, B)
    return y0 * np.exp(shift(model, theta0, z, e))
