"""Pairwise matrices, U-centering and the normalized U-centered inner product.

Every estimator in the engine is an inner product of two U-centered matrices,
so the array-level helpers here (`u_center_array`, `inner_array`) are the hot
path. They accept stacks of shape (..., n, n).
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from engine.errors import DomainError, InputValidationError
from engine.samples import SampleLike, as_sample

logger = logging.getLogger('centering')

PAIRWISE_KINDS = ("distance", "squared-distance", "kernel", "product")


@dataclass(frozen=True)
class PairwiseMatrix:
    entries: np.ndarray
    kind: str

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InputValidationError(f"pairwise matrix must be square, got shape {entries.shape}")
        if self.kind not in PAIRWISE_KINDS:
            raise InputValidationError(f"unknown pairwise kind {self.kind!r}; expected one of {PAIRWISE_KINDS}")
        if not np.array_equal(entries, entries.T):
            raise InputValidationError("pairwise matrix must be symmetric")
        if self.kind in ("distance", "squared-distance"):
            if np.any(np.diag(entries) != 0.0) or np.any(entries < 0.0):
                raise InputValidationError(f"{self.kind} matrix needs a zero diagonal and non-negative entries")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "kind": self.kind, "entries": self.entries.tolist()}


@dataclass(frozen=True)
class UCenteredMatrix:
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InputValidationError(f"U-centered matrix must be square, got shape {entries.shape}")
        if entries.shape[0] < 4:
            raise DomainError("sample size below 4")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "entries": self.entries.tolist()}


def distance_array(values: np.ndarray, exponent: int = 1) -> np.ndarray:
    """Dense Euclidean distance matrix of the rows of `values` raised to `exponent`."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, np.newaxis]
    if values.shape[1] == 1:
        column = values[:, 0]
        diff = np.abs(column[:, np.newaxis] - column[np.newaxis, :])
        return diff if exponent == 1 else diff * diff
    metric = "euclidean" if exponent == 1 else "sqeuclidean"
    return squareform(pdist(values, metric=metric))


def pairwise_distance(X: SampleLike, exponent: int = 1) -> PairwiseMatrix:
    sample = as_sample(X)
    if exponent not in (1, 2):
        raise InputValidationError(f"exponent must be 1 or 2, got {exponent!r}")
    if sample.n < 2:
        raise DomainError("pairwise distances need at least 2 rows")
    kind = "distance" if exponent == 1 else "squared-distance"
    return PairwiseMatrix(distance_array(sample.values, exponent), kind)


def u_center_array(a: np.ndarray) -> np.ndarray:
    """U-center a matrix (or a stack of matrices) given as a raw array.

    The diagonal is read as zero: the estimators are U-statistics over s != t,
    and with a zero diagonal the row, column and grand sums over the full
    matrix are exactly the printed ones.
    """
    centered = np.array(a, dtype=float, copy=True)
    n = centered.shape[-1]
    if n < 4:
        raise DomainError("sample size below 4")
    idx = np.arange(n)
    centered[..., idx, idx] = 0.0
    row_sums = centered.sum(axis=-1, keepdims=True)
    col_sums = centered.sum(axis=-2, keepdims=True)
    grand = row_sums.sum(axis=-2, keepdims=True)
    centered -= row_sums / (n - 2)
    centered -= col_sums / (n - 2)
    centered += grand / ((n - 1) * (n - 2))
    centered[..., idx, idx] = 0.0
    return centered


def inner_array(a: np.ndarray, b: np.ndarray) -> Union[float, np.ndarray]:
    """(A . B) for U-centered arrays; broadcasts over leading stack axes."""
    n = a.shape[-1]
    total = (a * b).sum(axis=(-2, -1))
    value = total / (n * (n - 3))
    return float(value) if np.ndim(value) == 0 else value


def u_center(M: Union[PairwiseMatrix, np.ndarray]) -> UCenteredMatrix:
    entries = M.entries if isinstance(M, PairwiseMatrix) else np.asarray(M, dtype=float)
    return UCenteredMatrix(u_center_array(entries))


def ucentered_inner(A: UCenteredMatrix, B: UCenteredMatrix) -> float:
    if A.n != B.n:
        raise DomainError(f"order mismatch: {A.n} vs {B.n}")
    return inner_array(A.entries, B.entries)
