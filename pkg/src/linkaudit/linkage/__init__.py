"""The linkage pipeline: blocking, encoding, projection, similarity, assessment."""

from .assess import (DEFAULT_TAUS, AssessmentReport, AssessOptions, assess, assess_latent,
                     cvpl_lr, naive_maxima)
from .blocking import (BlockIndex, BlockingScheme, BlockKey, assign_blocks, blocking_recall,
                       candidate_set, is_relaxation, parse_key, scheme_from_tokens)
from .encoding import EncodingConfig, Encoder, encode, fit_encoder
from .progressive import LadderError, ProgressiveResult, progressive_assess, validate_ladder
from .projection import Projection, fit_projection, project
from .similarity import cosine, unit_rows

__all__ = [
    "DEFAULT_TAUS", "AssessmentReport", "AssessOptions", "assess", "assess_latent", "cvpl_lr",
    "naive_maxima", "BlockIndex", "BlockingScheme", "BlockKey", "assign_blocks",
    "blocking_recall", "candidate_set", "is_relaxation", "parse_key", "scheme_from_tokens",
    "EncodingConfig", "Encoder", "encode", "fit_encoder", "LadderError", "ProgressiveResult",
    "progressive_assess", "validate_ladder", "Projection", "fit_projection", "project",
    "cosine", "unit_rows",
]
