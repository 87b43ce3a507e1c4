"""Compressive change detection with place-specific classifiers stored as visual words."""

from __future__ import annotations

__version__ = "0.1.0"

from .compressed_map import CompressedMap, build_place_models, space_cost  # noqa: E402
from .evaluation import SuccessCurve, build_collections, evaluate  # noqa: E402
from .features import ImageFeatures, load_features  # noqa: E402
from .pipeline import DetectConfig, detect  # noqa: E402
from .vocabulary import Vocabulary, build_vocabulary  # noqa: E402

__all__ = [
    "__version__", "CompressedMap", "build_place_models", "space_cost", "SuccessCurve",
    "build_collections", "evaluate", "ImageFeatures", "load_features", "DetectConfig", "detect",
    "Vocabulary", "build_vocabulary",
]
