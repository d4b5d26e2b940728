"""Re-classify detector proposals against an adapted vocabulary.

The label is the argmax of text-embedding similarity over the adapted
class set; restricting the set is the whole mechanism by which
vocabulary adaptation changes detections. Boxes pass through untouched:
box refinement is detector-internal and out of scope here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import (
    AdaptedVocabulary,
    Detection,
    EmbeddingMatrix,
    Proposal,
)
from .errors import DataError

SCORE_MODES = ("cosine", "softmax")


@dataclass(frozen=True)
class RescoreConfig:
    score_mode: str = "cosine"
    softmax_temperature: float = 0.01
    score_threshold: float = 0.0
    fuse_objectness: bool = False

    def __post_init__(self) -> None:
        if self.score_mode not in SCORE_MODES:
            raise DataError(f"unknown score mode {self.score_mode!r}")
        if not self.softmax_temperature > 0:
            raise DataError("softmax temperature must be positive")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise DataError("score threshold must be in [0, 1]")


def classify_proposal(
    proposal: Proposal,
    adapted: AdaptedVocabulary,
    class_emb: EmbeddingMatrix,
    proposal_emb: EmbeddingMatrix,
    cfg: RescoreConfig,
) -> Detection:
    """Label one proposal within the adapted class set.

    Ties break toward the lower class id. In softmax mode the score is
    the winning class's probability over the *adapted* set at the
    configured temperature, so shrinking the set redistributes mass.
    """
    if not adapted.class_ids:
        raise DataError(
            f"image {proposal.image_id!r}: empty adapted vocabulary; "
            "apply the selector fallback before re-scoring"
        )
    ids = sorted(adapted.class_ids)
    z = proposal_emb.row(proposal.embedding_key)
    rows = np.stack([class_emb.row(str(i)) for i in ids])
    sims = rows @ z
    best = int(np.argmax(sims))

    if cfg.score_mode == "cosine":
        score = float(sims[best])
    else:
        logits = (sims - sims[best]) / cfg.softmax_temperature
        weights = np.exp(logits)
        score = float(weights[best] / weights.sum())
    if cfg.fuse_objectness:
        score *= proposal.objectness
    return Detection(
        image_id=proposal.image_id,
        box=proposal.box,
        class_id=ids[best],
        score=score,
    )


def rescore_image(
    proposals: list[Proposal],
    adapted: AdaptedVocabulary,
    class_emb: EmbeddingMatrix,
    proposal_emb: EmbeddingMatrix,
    cfg: RescoreConfig,
) -> list[Detection]:
    """One detection per proposal, in proposal order."""
    return [
        classify_proposal(p, adapted, class_emb, proposal_emb, cfg)
        for p in proposals
    ]
