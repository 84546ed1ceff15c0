from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import DataError, ShapeError, SizeError


@dataclass(frozen=True)
class Dataset:
    """Time-ordered observations ``(X_t, Y_t)``.

    ``x`` is the design matrix exactly as it enters the regression, so any
    intercept or transformation of the raw covariates must already be in it.
    """

    x: np.ndarray
    y: np.ndarray
    time_ordered: bool = True
    names: Optional[Tuple[str, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ShapeError("x must be a 2-d array")
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite values")
        if x.shape[0] <= x.shape[1]:
            raise SizeError(f"need T > p, got T={x.shape[0]}, p={x.shape[1]}")
        if self.names is not None and len(self.names) != x.shape[1]:
            raise ShapeError("names must match the number of columns")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def rows(self, sl) -> "Dataset":
        return Dataset(self.x[sl], self.y[sl], self.time_ordered, self.names)

    def with_intercept(self) -> "Dataset":
        names = None if self.names is None else ("const",) + tuple(self.names)
        x = np.column_stack([np.ones(self.T), self.x])
        return Dataset(x, self.y, self.time_ordered, names)

    def column_names(self):
        if self.names is not None:
            return list(self.names)
        return [f"x{j}" for j in range(self.p)]
