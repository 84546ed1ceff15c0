"""The orthogonalised dependent variable ``R_t``.

Given an estimate ``F(. | x)`` that is 0 below the smallest training response
and 1 from the largest one on, ``R`` is

    int_0^inf (psi_bar - Psi(F(s))) ds - int_-inf^0 Psi(F(s)) ds
        + int (F(s) - 1{y <= s}) psi(F(s)) ds,

and with ``F`` held constant on each grid cell ``[s_j, s_{j+1})`` it reduces to

    R = s_k psi_bar + sum_j (s_{j+1} - s_j) M_j,
    M_j = -Psi(F_j) + (F_j - I_j) psi(F_j),
    I_j = clip((s_{j+1} - y) / (s_{j+1} - s_j), 0, 1),

where ``F_j = F(s_j | x)``. When ``y`` falls outside ``[s_1, s_k]`` the last
integral also picks up ``-(s_1 - y) psi(0)`` or ``(y - s_k) psi(1)``; these
terms are included so the identity ``R = y`` for ``psi = 1`` holds for every
``y``, not just those inside the training range.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, GridError, NumericError, ParameterError, ShapeError
from .weighting import WeightingSpec

DEFAULT_MAX_GRID_POINTS = 512


@dataclass(frozen=True, eq=False)
class TransformGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        if pts.size < 2:
            raise GridError("grid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise GridError("grid contains non-finite points")
        if np.any(np.diff(pts) <= 0):
            raise GridError("grid must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.size


def build_grid(train_y, max_points: int = DEFAULT_MAX_GRID_POINTS) -> TransformGrid:
    """Sorted distinct training responses, thinned to ``max_points``.

    Thinning keeps both extremes and picks interior values at equally spaced
    ranks among the distinct values.
    """
    if max_points < 2:
        raise ParameterError("max_points must be at least 2")
    vals = np.unique(np.asarray(train_y, dtype=float))
    if vals.size < 2:
        raise DegeneracyError("need at least two distinct responses to build a grid")
    if vals.size > max_points:
        idx = np.round(np.linspace(0, vals.size - 1, max_points)).astype(np.int64)
        vals = vals[idx]
    return TransformGrid(vals)


def fractional_indicator(y, s_j, s_j1):
    """Linear interpolation of ``1{y <= s}`` across the cell ``[s_j, s_j1]``."""
    s_j = np.asarray(s_j, dtype=float)
    s_j1 = np.asarray(s_j1, dtype=float)
    if np.any(s_j >= s_j1):
        raise GridError("cell endpoints must satisfy s_j < s_j1")
    out = np.clip((s_j1 - np.asarray(y, dtype=float)) / (s_j1 - s_j), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def rhat_from_cdf(fhat, y, grid, w: WeightingSpec):
    """Vectorised ``R`` for a matrix of CDF values.

    Parameters
    ----------
    fhat : array, shape (n, k)
        ``F(s_j | x_t)`` at the grid points; only the first ``k - 1`` columns
        are used.
    y : array, shape (n,)
    grid : TransformGrid or array of k increasing points
    w : WeightingSpec
    """
    s = grid.points if isinstance(grid, TransformGrid) else TransformGrid(grid).points
    fhat = np.atleast_2d(np.asarray(fhat, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if fhat.shape != (y.size, s.size):
        raise ShapeError(f"fhat has shape {fhat.shape}, expected {(y.size, s.size)}")
    f = fhat[:, :-1]
    if not np.all(np.isfinite(f)):
        raise NumericError("CDF estimate contains non-finite values")
    delta = np.diff(s)
    with np.errstate(over="ignore"):
        # tiny cells overflow to +-inf, which the clip maps to 0 or 1 correctly
        ind = np.clip((s[None, 1:] - y[:, None]) / delta[None, :], 0.0, 1.0)
    m = -w.Psi(f) + (f - ind) * w.psi(f)
    r = s[-1] * w.psi_bar + m @ delta
    below = np.maximum(s[0] - y, 0.0)
    above = np.maximum(y - s[-1], 0.0)
    r = r - below * w.psi(0.0) + above * w.psi(1.0)
    return r


def compute_rhat(model, w: WeightingSpec, x, y, grid: TransformGrid) -> float:
    """``R`` for a single observation ``(x, y)``.

    ``model`` is anything exposing ``evaluate(x, grid_points)``.
    """
    fhat = np.asarray(model.evaluate(x, grid.points), dtype=float).reshape(1, -1)
    return float(rhat_from_cdf(fhat, [y], grid, w)[0])


def compute_rhat_batch(model, w: WeightingSpec, x, y, grid: TransformGrid) -> np.ndarray:
    """``R_t`` for every row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    fhat = model.evaluate(x, grid.points)
    return rhat_from_cdf(fhat, y, grid, w)
