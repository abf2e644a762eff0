from .base import (
    CONSISTENT,
    CONTRADICTS,
    NO_MEMORY,
    CheckResult,
    Final,
    LMBackend,
    Subquestion,
    TranscriptStep,
    bind_context,
)
from .http import Decoding, HttpBackend, PromptLibrary, http_backend
from .oracle import (
    UNKNOWN,
    FailingRelations,
    HardEditBackend,
    OracleBackend,
    StochasticRecall,
    oracle_base,
    oracle_hard_edit,
)

__all__ = [
    "CONSISTENT",
    "CONTRADICTS",
    "NO_MEMORY",
    "UNKNOWN",
    "CheckResult",
    "Decoding",
    "FailingRelations",
    "Final",
    "HardEditBackend",
    "HttpBackend",
    "LMBackend",
    "OracleBackend",
    "PromptLibrary",
    "StochasticRecall",
    "Subquestion",
    "TranscriptStep",
    "bind_context",
    "http_backend",
    "oracle_base",
    "oracle_hard_edit",
]
