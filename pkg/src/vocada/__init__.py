"""Per-image vocabulary adaptation and re-scoring for open-vocabulary detectors."""

from .domain import (
    AdaptedVocabulary,
    Box,
    CaptionRecord,
    ClassEntry,
    Detection,
    EmbeddingMatrix,
    GroundTruthBox,
    ImageRecord,
    NounPhraseSet,
    Proposal,
    Vocabulary,
    normalize_name,
    validate_vocabulary,
)
from .errors import DataError, GatewayError, VocadaError

__version__ = "0.1.0"

__all__ = [
    "AdaptedVocabulary",
    "Box",
    "CaptionRecord",
    "ClassEntry",
    "DataError",
    "Detection",
    "EmbeddingMatrix",
    "GatewayError",
    "GroundTruthBox",
    "ImageRecord",
    "NounPhraseSet",
    "Proposal",
    "Vocabulary",
    "VocadaError",
    "normalize_name",
    "validate_vocabulary",
    "__version__",
]
