"""Package initialization."""
__version__ = "0.1.0"

from attestation_forecast.models import (
    ForecastSet,
    GrangerResult,
    ModelSpec,
    PanelDataset,
    PanelFit,
    RunConfig,
    SimConfig,
    TransformedPanel,
    TransformSpec,
    UnitFit,
)

__all__ = [
    "ForecastSet",
    "GrangerResult",
    "ModelSpec",
    "PanelDataset",
    "PanelFit",
    "RunConfig",
    "SimConfig",
    "TransformedPanel",
    "TransformSpec",
    "UnitFit",
]
