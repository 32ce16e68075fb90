"""Federated multi-domain retrieval: routing, stochastic gating and unified ranking."""

from ._core import (
    DataError,
    Error,
    HashedEmbedder,
    RemoteError,
    SearchService,
    UsageError,
    adaptive_threshold,
    build_index,
    chunk_page,
    count_tokens,
    evaluate,
    gate,
    generate,
    train,
)

__all__ = [
    "DataError",
    "Error",
    "HashedEmbedder",
    "RemoteError",
    "SearchService",
    "UsageError",
    "adaptive_threshold",
    "build_index",
    "chunk_page",
    "count_tokens",
    "evaluate",
    "gate",
    "generate",
    "train",
]
