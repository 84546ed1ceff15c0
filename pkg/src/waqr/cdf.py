"""Conditional distribution functions from tree-ensemble weights.

The estimator of ``F(s | x) = P(Y <= s | X = x)`` follows a binned scheme:

1. The training range ``[min Y, max Y]`` is cut into ``B = max(4, ceil(ln T1))``
   equal-width bins.
2. For each bin a random forest is grown on ``(X_t, 1{Y_t <= c_b})`` with
   ``c_b`` the bin centre. Its leaves define nonnegative weights ``w_t(x)``
   summing to one (bootstrap multiplicities included).
3. For a grid point ``s`` in bin ``b`` the forest-``b`` weights are reused and
   the weighted average is replaced by a local linear fit of ``1{Y_t <= s}``
   on ``(1, X_t - x)``; its intercept is the estimate.
4. The result is clipped to ``[0, 1]`` and forced to 0 below ``min Y`` and to
   1 at or above ``max Y``. No monotone rearrangement is applied.

Because the fitted value is linear in the responses, each query point gets a
vector of effective weights ``l_t(x)`` and ``F(s | x) = sum_t l_t(x) 1{Y_t <= s}``
is a cumulative sum over the sorted training responses.
"""

from dataclasses import dataclass, field
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from sklearn import config_context
from sklearn.tree import DecisionTreeRegressor

from .dataset import Dataset
from .errors import DegeneracyError, GridError, ParameterError, ShapeError, SizeError
from .rng import STREAM_BOOTSTRAP, STREAM_TREE_SEED, stream, stream_seed

MIN_TRAIN_ROWS = 50

# caps the dense (queries x training rows) weight block held in memory
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class CdfConfig:
    n_trees: int = 200
    leaf_candidates: Tuple[int, ...] = (5, 10, 25, 50, 100)
    mtry: Optional[int] = None
    bins_override: Optional[int] = None
    leaf_size: Optional[int] = None
    ridge: float = 1e-8

    def __post_init__(self):
        if self.n_trees < 1:
            raise ParameterError("n_trees must be positive")
        if self.bins_override is not None and self.bins_override < 1:
            raise ParameterError("bins_override must be positive")
        if self.mtry is not None and self.mtry < 1:
            raise ParameterError("mtry must be positive")
        if self.leaf_size is not None and self.leaf_size < 1:
            raise ParameterError("leaf_size must be positive")
        object.__setattr__(self, "leaf_candidates", tuple(int(c) for c in self.leaf_candidates))


def n_bins(T1: int, override: Optional[int] = None) -> int:
    """Number of bins: ``max(4, ceil(ln T1))`` unless overridden."""
    if override is not None:
        return int(override)
    return max(4, math.ceil(math.log(T1)))


class _WeightForest:
    """Bootstrap forest whose only output is leaf-sharing weights."""

    def __init__(self, x32, v, leaf_size, mtry, n_trees, seed, bin_index):
        n = x32.shape[0]
        v = np.ascontiguousarray(v, dtype=np.float64)
        self.n_train = n
        self.n_trees = n_trees
        self.trees = []
        rows, cols, vals = [], [], []
        offset = 0
        # parameters are validated once by CdfConfig; skipping sklearn's
        # per-fit validation saves a third of the tree-fitting time
        with config_context(skip_parameter_validation=True):
            for j in range(n_trees):
                rng = stream(seed, STREAM_BOOTSTRAP, bin_index, j)
                counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
                tree = DecisionTreeRegressor(
                    min_samples_leaf=leaf_size,
                    max_features=mtry,
                    random_state=stream_seed(seed, STREAM_TREE_SEED, bin_index, j),
                )
                tree.fit(x32, v, sample_weight=counts, check_input=False)
                leaves = tree.tree_.apply(x32)
                mass = np.bincount(leaves, weights=counts, minlength=tree.tree_.node_count)
                inbag = counts > 0
                rows.append(offset + leaves[inbag])
                cols.append(np.flatnonzero(inbag))
                vals.append(counts[inbag] / mass[leaves[inbag]])
                self.trees.append((tree.tree_, offset))
                offset += tree.tree_.node_count
        self.n_nodes = offset
        self._leaf_to_train = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, n),
        )

    def weights(self, xq32):
        """Dense ``(len(xq), n_train)`` weight matrix; rows sum to one."""
        m = xq32.shape[0]
        cols = np.empty((m, self.n_trees), dtype=np.int64)
        for j, (tree, offset) in enumerate(self.trees):
            cols[:, j] = tree.apply(xq32) + offset
        onehot = sparse.csr_matrix(
            (np.full(m * self.n_trees, 1.0 / self.n_trees), cols.ravel(),
             np.arange(0, m * self.n_trees + 1, self.n_trees)),
            shape=(m, self.n_nodes),
        )
        return (onehot @ self._leaf_to_train).toarray()


def local_linear_weights(w, x_train, x_query, ridge=1e-8):
    """Effective weights of a local linear fit with kernel weights ``w``.

    For query ``i`` the fit regresses the response on ``(1, X_t - x_i)`` with
    weights ``w[i]`` and returns the intercept, which equals
    ``sum_t l[i, t] V_t``. Each slope diagonal of the normal equations is
    inflated by the factor ``1 + ridge``; the intercept is not penalised, so
    each row of ``l`` sums to exactly one.
    """
    w = np.asarray(w, dtype=float)
    m, n = w.shape
    p = x_train.shape[1]
    if p == 0:
        return w.copy()
    s0 = w.sum(axis=1)
    s1 = w @ x_train
    outer = (x_train[:, :, None] * x_train[:, None, :]).reshape(n, p * p)
    s2 = (w @ outer).reshape(m, p, p)
    xq = x_query
    # moments of the design (1, X_t - x_i)
    c1 = s1 - s0[:, None] * xq
    c2 = (s2 - s1[:, :, None] * xq[:, None, :] - xq[:, :, None] * s1[:, None, :]
          + s0[:, None, None] * xq[:, :, None] * xq[:, None, :])
    a = np.empty((m, p + 1, p + 1))
    a[:, 0, 0] = s0
    a[:, 0, 1:] = c1
    a[:, 1:, 0] = c1
    a[:, 1:, 1:] = c2
    idx = np.arange(1, p + 1)
    diag = c2[:, idx - 1, idx - 1]
    # relative ridge per slope: invariant to rescaling a covariate; a slope
    # with no weighted spread gets a unit diagonal so its coefficient is 0
    a[:, idx, idx] += np.where(diag > 0, ridge * diag, 1.0)
    rhs = np.zeros((m, p + 1, 1))
    rhs[:, 0, 0] = 1.0
    coef = np.linalg.solve(a, rhs)[:, :, 0]
    # l_it = w_it * (c0_i + (X_t - x_i)' c_i)
    base = coef[:, 0] - np.einsum("ij,ij->i", coef[:, 1:], xq)
    return w * (base[:, None] + coef[:, 1:] @ x_train.T)


@dataclass(frozen=True, eq=False)
class ConditionalCdfModel:
    """Fitted binned forest estimator of ``F(s | x)``."""

    bins: np.ndarray
    edges: np.ndarray
    forests: List[_WeightForest] = field(repr=False)
    x_train: np.ndarray = field(repr=False)
    y_sorted: np.ndarray = field(repr=False)
    order: np.ndarray = field(repr=False)
    training_bounds: Tuple[float, float]
    leaf_size: int
    keep_columns: np.ndarray = field(repr=False)
    n_features: int
    ridge: float = 1e-8
    signs: Optional[np.ndarray] = field(default=None, repr=False)

    def bin_of(self, s):
        """Index of the bin whose centre is nearest to each ``s``."""
        s = np.asarray(s, dtype=float)
        width = self.edges[1] - self.edges[0]
        idx = np.floor((s - self.edges[0]) / width).astype(np.int64)
        return np.clip(idx, 0, len(self.bins) - 1)

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeError(f"expected covariates with {self.n_features} columns, got shape {x.shape}")
        return x[:, self.keep_columns], single

    def evaluate(self, x, grid):
        """``F(grid_j | x_i)``; returns shape ``(len(x), len(grid))`` or ``(len(grid),)``."""
        xq, single = self._prepare(x)
        grid = np.asarray(grid, dtype=float).reshape(-1)
        if grid.size > 1 and np.any(np.diff(grid) < 0):
            raise GridError("grid must be sorted ascending")
        n = self.y_sorted.size
        k = grid.size
        out = np.empty((xq.shape[0], k))
        lo, hi = self.training_bounds
        which = self.bin_of(grid)
        counts = np.searchsorted(self.y_sorted, grid, side="right")
        inside = (grid >= lo) & (grid < hi)
        xq32 = self._tree_input(xq)
        chunk = max(1, _CHUNK_ELEMENTS // max(n, 1))
        for start in range(0, xq.shape[0], chunk):
            sl = slice(start, start + chunk)
            block = np.zeros((xq[sl].shape[0], k))
            for b in np.unique(which[inside]):
                cols = np.flatnonzero(inside & (which == b))
                w = self.forests[b].weights(xq32[sl])
                ell = local_linear_weights(w, self.x_train, xq[sl], self.ridge)
                cum = np.cumsum(ell[:, self.order], axis=1)
                c = counts[cols]
                block[:, cols] = np.where(c > 0, cum[:, np.maximum(c - 1, 0)], 0.0)
            out[sl] = block
        out = np.clip(out, 0.0, 1.0)
        out[:, grid < lo] = 0.0
        out[:, grid >= hi] = 1.0
        return out[0] if single else out

    def forest_weights(self, x, bin_index):
        """Raw forest weights of bin ``bin_index`` for query rows ``x``."""
        xq, _ = self._prepare(np.atleast_2d(x))
        return self.forests[bin_index].weights(self._tree_input(xq))

    def _tree_input(self, xq):
        return _as_tree_input(xq, self.signs)


def _covariates(x):
    x = np.asarray(x, dtype=float)
    keep = np.ptp(x, axis=0) > 0 if x.shape[0] else np.ones(x.shape[1], bool)
    return keep


def _canonical_signs(x):
    """Per-column signs that make ``signs * x`` unchanged when a column is negated.

    The sign is taken from the first row that differs from the column mean, so
    flipping a column flips its sign too and the trees see identical input.
    """
    signs = np.ones(x.shape[1])
    dev = x - x.mean(axis=0)
    for j in range(x.shape[1]):
        nz = np.flatnonzero(dev[:, j])
        if nz.size and dev[nz[0], j] < 0:
            signs[j] = -1.0
    return signs


def _as_tree_input(xk, signs):
    if xk.shape[1] == 0:
        return np.zeros((xk.shape[0], 1), dtype=np.float32)
    return np.ascontiguousarray(xk * signs, dtype=np.float32)


def _fit_fixed_leaf(x, y, leaf_size, cfg, seed, keep=None):
    T1 = y.size
    lo, hi = float(y.min()), float(y.max())
    if not lo < hi:
        raise DegeneracyError("training responses are all equal")
    if T1 < 2 * leaf_size:
        raise SizeError(f"{T1} rows cannot support minimum leaf size {leaf_size}")
    if keep is None:
        keep = _covariates(x)
    xk = x[:, keep]
    B = n_bins(T1, cfg.bins_override)
    edges = np.linspace(lo, hi, B + 1)
    centres = (edges[:-1] + edges[1:]) / 2.0
    p = xk.shape[1]
    mtry = cfg.mtry if cfg.mtry is not None else max(1, math.ceil(p / 3))
    mtry = min(mtry, max(p, 1))
    # with no usable covariates every query gets the marginal weights
    signs = _canonical_signs(xk)
    x32 = _as_tree_input(xk, signs)
    forests = [
        _WeightForest(x32, (y <= c).astype(float), leaf_size, mtry, cfg.n_trees, seed, b)
        for b, c in enumerate(centres)
    ]
    order = np.argsort(y, kind="stable")
    return ConditionalCdfModel(
        bins=centres,
        edges=edges,
        forests=forests,
        x_train=xk,
        y_sorted=y[order],
        order=order,
        training_bounds=(lo, hi),
        leaf_size=int(leaf_size),
        keep_columns=keep,
        n_features=x.shape[1],
        ridge=cfg.ridge,
        signs=signs,
    )


def select_leaf_size(data: Dataset, candidates: Sequence[int], cfg: CdfConfig = CdfConfig(),
                     rng_seed: int = 0) -> int:
    """Choose the minimum leaf size by a consecutive fit/validation split.

    The first three quarters of ``data`` train one estimator per candidate; the
    last quarter scores them by the mean squared error of ``F(c_b | X_t)``
    against ``1{Y_t <= c_b}``, pooled over bin centres ``c_b``. Ties go to the
    larger leaf size. Candidates too large for the fit part are skipped.
    """
    cands = sorted({int(c) for c in candidates}, reverse=True)
    if not cands:
        raise ParameterError("no leaf-size candidates given")
    if any(c < 1 for c in cands):
        raise ParameterError("leaf sizes must be positive")
    if len(cands) == 1:
        return cands[0]
    n = data.T
    n_fit = int(math.ceil(0.75 * n))
    if n - n_fit < 1:
        raise SizeError("too few rows to hold out a validation part")
    feasible = [c for c in cands if 2 * c <= n_fit]
    if not feasible:
        raise SizeError(f"no leaf-size candidate fits {n_fit} rows")
    if len(feasible) == 1:
        return feasible[0]
    x, y = data.x, data.y
    keep = _covariates(x[:n_fit])
    xv, yv = x[n_fit:], y[n_fit:]
    best, best_mse = None, np.inf
    for c in feasible:
        model = _fit_fixed_leaf(x[:n_fit], y[:n_fit], c, cfg, rng_seed, keep)
        fhat = model.evaluate(xv, model.bins)
        target = (yv[:, None] <= model.bins[None, :]).astype(float)
        mse = float(np.mean((fhat - target) ** 2))
        if mse < best_mse:
            best, best_mse = c, mse
    return best


def fit_conditional_cdf(train: Dataset, cfg: CdfConfig = CdfConfig(), rng_seed: int = 0) -> ConditionalCdfModel:
    """Fit the binned forest estimator on ``train``.

    The leaf size is ``cfg.leaf_size`` when given, otherwise it is chosen by
    :func:`select_leaf_size` over ``cfg.leaf_candidates``.
    """
    if train.T < MIN_TRAIN_ROWS:
        raise SizeError(f"need at least {MIN_TRAIN_ROWS} training rows, got {train.T}")
    if not train.y.min() < train.y.max():
        raise DegeneracyError("training responses are all equal")
    if cfg.leaf_size is not None:
        leaf = cfg.leaf_size
    else:
        leaf = select_leaf_size(train, cfg.leaf_candidates, cfg, rng_seed)
    return _fit_fixed_leaf(train.x, train.y, leaf, cfg, rng_seed)


def evaluate_cdf(model: ConditionalCdfModel, x, grid) -> np.ndarray:
    return model.evaluate(x, grid)
