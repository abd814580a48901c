from __future__ import annotations

from collections.abc import Callable
from typing import Any

from .base import ClampCounter, ImplicitModel, LikelihoodModel
from .cartpole import CartpoleModel
from .linear_gaussian import LinearGaussianModel
from .location_finding import LocationFindingModel
from .sir import EpidemicPath, SIRModel

MODEL_REGISTRY: dict[str, Callable[..., ImplicitModel]] = {
    LocationFindingModel.name: LocationFindingModel,
    SIRModel.name: SIRModel,
    CartpoleModel.name: CartpoleModel,
    LinearGaussianModel.name: LinearGaussianModel,
}


def build_model(name: str, **params: Any) -> ImplicitModel:
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError as exc:
        raise ValueError(
            f"Unknown model {name!r}; registered: {', '.join(sorted(MODEL_REGISTRY))}"
        ) from exc
    return factory(**params)


__all__ = [
    "MODEL_REGISTRY",
    "CartpoleModel",
    "ClampCounter",
    "EpidemicPath",
    "ImplicitModel",
    "LikelihoodModel",
    "LinearGaussianModel",
    "LocationFindingModel",
    "SIRModel",
    "build_model",
]
