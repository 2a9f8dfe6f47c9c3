# Copyright (C) 2026 The spring-rag Authors
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the spring-rag toolkit."""

from ._core import (
    Bm25Index,
    SpringError,
    Vocab,
    exact_match,
    f1_score,
    normalize_answer,
    run_cli,
    sha256_file,
    split_words,
    synthetic_task,
)

__all__ = [
    "Bm25Index",
    "SpringError",
    "Vocab",
    "exact_match",
    "f1_score",
    "normalize_answer",
    "run_cli",
    "sha256_file",
    "split_words",
    "synthetic_task",
]
