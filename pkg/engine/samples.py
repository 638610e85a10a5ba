import logging
from dataclasses import dataclass
from typing import Any, Dict, Union

import numpy as np

from engine.errors import DomainError, InputValidationError

logger = logging.getLogger('samples')


@dataclass(frozen=True)
class SampleMatrix:
    """An n x d block of observations, rows are samples, columns coordinates."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, np.newaxis]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InputValidationError(
                f"sample matrix must be two-dimensional and non-empty, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            bad_row, bad_col = np.argwhere(~np.isfinite(values))[0]
            raise InputValidationError(
                f"non-finite entry at row {bad_row + 1}, column {bad_col + 1}",
                row=int(bad_row) + 1,
                column=int(bad_col) + 1,
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def to_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "d": self.d, "values": self.values.tolist()}


SampleLike = Union[SampleMatrix, np.ndarray, list]


def as_sample(X: SampleLike) -> SampleMatrix:
    if isinstance(X, SampleMatrix):
        return X
    return SampleMatrix(np.asarray(X, dtype=float))


def as_pair(X: SampleLike, Y: SampleLike, min_n: int = 4):
    """Coerce a pair of samples and check they share the sample count."""
    x, y = as_sample(X), as_sample(Y)
    if x.n != y.n:
        raise InputValidationError(f"row-count mismatch: X has {x.n} rows, Y has {y.n}")
    if x.n < min_n:
        raise DomainError(f"sample size below {min_n}")
    return x, y
