"""Split-sample weighted-average quantile regression with HAC inference.

Pipeline (:func:`waqr_fit`):

1. split the time-ordered sample into a leading training block and a trailing
   evaluation block;
2. fit the conditional CDF on the training block;
3. build ``R_t`` on the evaluation block;
4. regress ``R_t`` on ``X_t`` by OLS and estimate the covariance of
   ``sqrt(T2) (beta_hat - beta)`` by Newey-West.

:func:`waqr_crossfit` is the i.i.d. variant that swaps the roles of the two
blocks and combines the two estimates.
"""

from dataclasses import dataclass, field
import math
from typing import Callable, Optional, Tuple, Union
import warnings

import numpy as np
from scipy import linalg, stats

from .cdf import CdfConfig, fit_conditional_cdf
from .dataset import Dataset
from .errors import ParameterError, SingularityError, SizeError
from .transform import DEFAULT_MAX_GRID_POINTS, build_grid, compute_rhat_batch
from .weighting import WeightingSpec

__all__ = [
    "Dataset",
    "FitConfig",
    "FitResult",
    "bartlett",
    "confidence_intervals",
    "default_nw_lag",
    "ehw_cov",
    "newey_west_cov",
    "ols",
    "split_sample",
    "waqr_crossfit",
    "waqr_fit",
]

COND_WARN = 1e10


def bartlett(j, m):
    return 1.0 - j / (m + 1.0)


@dataclass(frozen=True)
class FitConfig:
    split_ratio: float = 2.0 / 3.0
    nw_lag: Union[int, str] = "auto"
    nw_divisor: str = "T2"
    max_grid_points: int = DEFAULT_MAX_GRID_POINTS
    level: float = 0.9
    crossfit_combine: str = "average"
    crossfit_ratio: float = 0.5
    cdf: CdfConfig = field(default_factory=CdfConfig)

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ParameterError("split_ratio must lie in (0, 1)")
        if not 0.0 < self.crossfit_ratio < 1.0:
            raise ParameterError("crossfit_ratio must lie in (0, 1)")
        if self.nw_lag != "auto" and (not isinstance(self.nw_lag, (int, np.integer)) or self.nw_lag < 0):
            raise ParameterError("nw_lag must be 'auto' or a non-negative integer")
        if self.nw_divisor not in ("T2", "T2-T1"):
            raise ParameterError("nw_divisor must be 'T2' or 'T2-T1'")
        if self.crossfit_combine not in ("average", "pooled"):
            raise ParameterError("crossfit_combine must be 'average' or 'pooled'")
        if not 0.0 < self.level < 1.0:
            raise ParameterError("level must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class FitResult:
    beta_hat: np.ndarray
    residuals: np.ndarray
    sigma_hat: np.ndarray
    std_errors: np.ndarray
    rhat: np.ndarray
    split: Tuple[int, int]
    nw_lag: int
    names: Tuple[str, ...] = ()
    psi: Optional[dict] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def t_stats(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.beta_hat / self.std_errors

    def ci(self, level=0.9):
        return confidence_intervals(self, level)

    def to_dict(self, level=0.9):
        ci = confidence_intervals(self, level)
        return {
            "names": list(self.names),
            "beta_hat": self.beta_hat.tolist(),
            "std_errors": self.std_errors.tolist(),
            "ci": ci.tolist(),
            "ci_level": level,
            "nw_lag": int(self.nw_lag),
            "split": [int(self.split[0]), int(self.split[1])],
            "condition_number": float(self.diagnostics.get("condition_number", float("nan"))),
            "psi": self.psi,
            "diagnostics": {k: v for k, v in self.diagnostics.items() if k != "condition_number"},
        }


def _n_first(T, ratio):
    # round away float noise first so 2/3 * 300 gives 200, not 201
    return int(math.ceil(round(ratio * T, 9)))


def split_sample(data: Dataset, ratio: float = 2.0 / 3.0):
    """First ``ceil(ratio * T)`` rows for training, the rest for evaluation."""
    if not 0.0 < ratio < 1.0:
        raise ParameterError("ratio must lie in (0, 1)")
    T1 = _n_first(data.T, ratio)
    T2 = data.T - T1
    if min(T1, T2) < data.p + 1:
        raise SizeError(f"split ({T1}, {T2}) leaves a part with fewer than p + 1 = {data.p + 1} rows")
    return data.rows(slice(0, T1)), data.rows(slice(T1, None))


def default_nw_lag(T2: int) -> int:
    """``floor(T2 ** (1/5))``."""
    return int(math.floor(T2 ** 0.2 + 1e-12))


def _rank_check(x, names=None):
    """Condition number of ``x``; raises if ``x`` is column-rank deficient."""
    sv = np.linalg.svd(x, compute_uv=False)
    tol = max(x.shape) * np.finfo(float).eps * sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > tol))
    if rank < x.shape[1]:
        _, _, piv = linalg.qr(x, mode="economic", pivoting=True)
        bad = sorted(int(j) for j in piv[rank:])
        labels = [names[j] for j in bad] if names else bad
        raise SingularityError(f"design matrix is rank deficient; offending columns: {labels}", bad)
    return float(sv[0] / sv[-1])


def ols(x, r, names=None):
    """OLS coefficients, residuals and condition number of ``x``."""
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    cond = _rank_check(x, names)
    beta, *_ = np.linalg.lstsq(x, r, rcond=None)
    return beta, r - x @ beta, cond


def newey_west_cov(x_eval, resid, m: int, kernel: Callable = bartlett, divisor: Optional[float] = None):
    """Newey-West estimate of the covariance of ``sqrt(T2) (beta_hat - beta)``.

    ``Omega_j = sum_t e_t e_{t-j} X_t X_{t-j}' / divisor`` with ``divisor``
    defaulting to ``T2``, combined with kernel weights ``kernel(j, m)`` and
    sandwiched by the inverse of ``X'X / T2``. The result is symmetrised.
    """
    x = np.asarray(x_eval, dtype=float)
    e = np.asarray(resid, dtype=float).reshape(-1)
    T2 = x.shape[0]
    if e.size != T2:
        raise ParameterError("residuals and design have different lengths")
    if not isinstance(m, (int, np.integer)) or m < 0:
        raise ParameterError("lag m must be a non-negative integer")
    if m >= T2:
        raise ParameterError(f"lag m={m} must be smaller than T2={T2}")
    div = float(T2 if divisor is None else divisor)
    if div <= 0:
        raise ParameterError("Newey-West divisor must be positive")
    omega = omega_hat(x, e, 0, div)
    for j in range(1, m + 1):
        oj = omega_hat(x, e, j, div)
        omega = omega + kernel(j, m) * (oj + oj.T)
    # (X'X / T2)^{-1} from the R factor, without squaring the condition number
    r = np.linalg.qr(x, mode="r")
    r_inv = linalg.solve_triangular(r, np.eye(r.shape[0]))
    q_inv = T2 * (r_inv @ r_inv.T)
    sigma = q_inv @ omega @ q_inv
    return (sigma + sigma.T) / 2.0


def omega_hat(x, resid, j: int, divisor: float):
    """Lag-``j`` score autocovariance ``sum_{t>j} e_t e_{t-j} X_t X_{t-j}' / divisor``."""
    u = np.asarray(x, dtype=float) * np.asarray(resid, dtype=float).reshape(-1)[:, None]
    if j == 0:
        return u.T @ u / divisor
    return u[j:].T @ u[:-j] / divisor


def ehw_cov(x, resid):
    """Eicker-Huber-White sandwich, i.e. :func:`newey_west_cov` with ``m = 0``."""
    return newey_west_cov(x, resid, 0)


def _psd_repair(sigma):
    vals, vecs = np.linalg.eigh(sigma)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if vals.min() >= -1e-12 * scale:
        return sigma, False
    fixed = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return (fixed + fixed.T) / 2.0, True


def confidence_intervals(fit: FitResult, level: float = 0.9) -> np.ndarray:
    """Normal-critical-value intervals, shape ``(p, 2)``."""
    if not 0.0 < level < 1.0:
        raise ParameterError("level must lie in (0, 1)")
    z = stats.norm.ppf((1.0 + level) / 2.0)
    half = z * fit.std_errors
    return np.column_stack([fit.beta_hat - half, fit.beta_hat + half])


def _finish(beta, x, resid, rhat, T_se, sigma, split, lag, names, w, diag):
    sigma, repaired = _psd_repair(sigma)
    se = np.sqrt(np.maximum(np.diag(sigma), 0.0) / T_se)
    diag = dict(diag)
    diag["psd_repaired"] = repaired
    # exact fits leave rounding-level residuals, so "zero" is relative to the estimate
    tiny = 1e-12 * np.maximum(1.0, np.abs(beta))
    diag["zero_se"] = [int(i) for i in np.flatnonzero(se <= tiny)]
    if diag.get("condition_number", 0.0) > COND_WARN:
        diag["near_singular"] = True
        warnings.warn(f"design condition number {diag['condition_number']:.3g} exceeds {COND_WARN:g}")
    return FitResult(
        beta_hat=beta,
        residuals=resid,
        sigma_hat=sigma,
        std_errors=se,
        rhat=rhat,
        split=split,
        nw_lag=lag,
        names=tuple(names),
        psi=None if w is None else w.describe(),
        diagnostics=diag,
    )


def fit_from_rhat(x_eval, rhat, nw_lag="auto", names=None, w=None, split=None, nw_divisor=None, diag=None):
    """OLS of a given dependent variable with Newey-West inference."""
    x_eval = np.asarray(x_eval, dtype=float)
    names = list(names) if names is not None else [f"x{j}" for j in range(x_eval.shape[1])]
    beta, resid, cond = ols(x_eval, rhat, names)
    T2 = x_eval.shape[0]
    lag = default_nw_lag(T2) if nw_lag == "auto" else int(nw_lag)
    sigma = newey_west_cov(x_eval, resid, lag, divisor=nw_divisor)
    d = {"condition_number": cond}
    d.update(diag or {})
    split = split if split is not None else (0, T2)
    return _finish(beta, x_eval, resid, np.asarray(rhat, float), T2, sigma, split, lag, names, w, d)


def _transform_block(train: Dataset, ev: Dataset, w, cfg: FitConfig, seed):
    model = fit_conditional_cdf(train, cfg.cdf, seed)
    grid = build_grid(train.y, cfg.max_grid_points)
    rhat = compute_rhat_batch(model, w, ev.x, ev.y, grid)
    return rhat, {"leaf_size": model.leaf_size, "n_bins": int(len(model.bins)), "grid_points": grid.k}


def waqr_fit(data: Dataset, w: WeightingSpec, cfg: FitConfig = FitConfig(), seed: int = 0) -> FitResult:
    """Split-sample estimator; deterministic given ``seed``."""
    train, ev = split_sample(data, cfg.split_ratio)
    names = data.column_names()
    # rank problems surface before the expensive CDF fit
    _rank_check(ev.x, names)
    rhat, info = _transform_block(train, ev, w, cfg, seed)
    divisor = ev.T if cfg.nw_divisor == "T2" else ev.T - train.T
    return fit_from_rhat(ev.x, rhat, cfg.nw_lag, names, w, (train.T, ev.T), divisor, info)


def waqr_crossfit(data: Dataset, w: WeightingSpec, cfg: FitConfig = FitConfig(), seed: int = 0) -> FitResult:
    """Cross-fitted estimator for i.i.d. data.

    The sample is cut at ``cfg.crossfit_ratio`` (halves by default). Each
    block's ``R_t`` is built from a CDF fitted on the other block. With
    ``cfg.crossfit_combine == "average"`` the two block-wise OLS estimates are
    averaged; with ``"pooled"`` a single OLS runs over all ``T`` rows. The
    covariance is the Eicker-Huber-White sandwich on the pooled residuals,
    scaled for ``sqrt(T)``.
    """
    first, second = split_sample(data, cfg.crossfit_ratio)
    names = data.column_names()
    _rank_check(first.x, names)
    _rank_check(second.x, names)
    r2, info2 = _transform_block(first, second, w, cfg, seed)
    r1, info1 = _transform_block(second, first, w, cfg, seed + 1)
    x = data.x
    rhat = np.concatenate([r1, r2])
    if cfg.crossfit_combine == "average":
        b1, _, _ = ols(second.x, r2, names)
        b2, _, _ = ols(first.x, r1, names)
        beta = (b1 + b2) / 2.0
        cond = _rank_check(x, names)
    else:
        beta, _, cond = ols(x, rhat, names)
    resid = rhat - x @ beta
    sigma = ehw_cov(x, resid)
    diag = {"condition_number": cond, "blocks": [info1, info2], "combine": cfg.crossfit_combine}
    if cfg.crossfit_combine == "average":
        # estimate from the CDF fitted on each block, in block order
        diag["block_estimates"] = [b1.tolist(), b2.tolist()]
    return _finish(beta, x, resid, rhat, data.T, sigma, (first.T, second.T), 0, names, w, diag)
