"""Parametric comparator built from linear quantile regressions.

The comparator estimates ``int beta(u) psi(u) du`` by fitting a linear
quantile regression at every node of a quantile grid and combining the
coefficient paths with ``psi``-weighted quadrature weights. It is consistent
only when every conditional quantile is linear in ``X``; see
:func:`appendix_c_oracle` for a closed-form counterexample.
"""

from dataclasses import dataclass, field
import itertools
from typing import List, Optional

import numpy as np

from .dataset import Dataset
from .errors import ConvergenceError, ParameterError, SizeError
from .weighting import WeightingSpec

DEFAULT_TOL = 1e-8


def check_loss(y, x, b, u):
    """Mean check loss ``mean(rho_u(y - x b))``."""
    r = np.asarray(y, float) - np.asarray(x, float) @ np.asarray(b, float)
    return float(np.mean(r * (u - (r < 0))))


def _mm_solve(x, y, u, b, kappa, max_iter, rtol=1e-12):
    """Majorize-minimize iterations for the check loss with |r| smoothed at kappa."""
    xs = x.sum(axis=0)
    for it in range(max_iter):
        r = y - x @ b
        wt = 1.0 / np.maximum(np.abs(r), kappa)
        a = (x * wt[:, None]).T @ x
        rhs = x.T @ (wt * y) + (2.0 * u - 1.0) * xs
        try:
            b_new = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError:
            b_new = np.linalg.lstsq(a, rhs, rcond=None)[0]
        step = np.max(np.abs(b_new - b))
        b = b_new
        if step <= rtol * (1.0 + np.max(np.abs(b))):
            break
    return b, it + 1


def _basis_fit(x, y, idx):
    sub = x[idx]
    if abs(np.linalg.det(sub)) < 1e-12 * max(1.0, np.max(np.abs(sub)) ** len(idx)):
        return None
    return np.linalg.solve(sub, y[idx])


def _polish(x, y, u, b, n_candidates):
    """Move to the best interpolating (vertex) fit near ``b``.

    The ``n_candidates`` observations with the smallest residuals are the only
    ones considered; a vertex of the check-loss LP interpolates ``d`` of them.
    Single exchanges are applied while they lower the loss.
    """
    d = x.shape[1]
    r = y - x @ b
    cand = np.argsort(np.abs(r), kind="stable")[: max(n_candidates, d)]
    basis = None
    for combo in itertools.combinations(range(len(cand)), d):
        idx = cand[list(combo)]
        bb = _basis_fit(x, y, idx)
        if bb is not None:
            basis = list(idx)
            break
    if basis is None:
        return b
    best_b = _basis_fit(x, y, basis)
    best = check_loss(y, x, best_b, u)
    improved = True
    while improved:
        improved = False
        for pos in range(d):
            for c in cand:
                if c in basis:
                    continue
                trial = basis.copy()
                trial[pos] = c
                bb = _basis_fit(x, y, trial)
                if bb is None:
                    continue
                loss = check_loss(y, x, bb, u)
                if loss < best - 1e-15 * max(1.0, abs(best)):
                    basis, best_b, best, improved = trial, bb, loss, True
    return best_b


def subgradient_gap(x, y, b, u, atol=1e-9):
    """Per-column excess of the optimality residual over its allowed slack.

    At a minimiser, for every column ``i``,
    ``|sum_t x_ti (u - 1{y_t < x_t b})| <= max_t |x_ti| * (n_interp + 1)``
    where ``n_interp`` counts observations fitted exactly. Returns the largest
    violation (non-positive when the certificate holds).
    """
    r = y - x @ b
    scale = atol * (1.0 + np.abs(y))
    n_interp = int(np.sum(np.abs(r) <= scale))
    g = x.T @ (u - (r < -scale))
    bound = np.max(np.abs(x), axis=0) * (n_interp + 1)
    return float(np.max(np.abs(g) - bound))


def quantile_regression(data: Dataset, u: float, tol: float = DEFAULT_TOL, max_iter: int = 50,
                        kappa0: Optional[float] = None) -> np.ndarray:
    """Linear ``u``-quantile regression of ``data.y`` on ``data.x``.

    Minimises the check loss with majorize-minimize (iteratively reweighted
    least squares) on a smoothed loss, halving the smoothing level from
    ``sd(y) / 10`` until it drops below ``tol``, then rounds to the best
    nearby interpolating fit. ``max_iter`` caps the iterations per smoothing
    level. The result must pass :func:`subgradient_gap`,
    otherwise :class:`ConvergenceError` is raised.
    """
    if not 0.0 < u < 1.0:
        raise ParameterError("u must lie in (0, 1)")
    x, y = data.x, data.y
    T, d = x.shape
    if T <= d:
        raise SizeError("need T > p")
    sd = float(np.std(y))
    kappa = kappa0 if kappa0 is not None else (sd / 10.0 if sd > 0 else 1.0)
    b = np.linalg.lstsq(x, y, rcond=None)[0]
    while True:
        b, _ = _mm_solve(x, y, u, b, kappa, max_iter)
        if kappa < tol:
            break
        kappa /= 2.0
    cand = min(T, 4 * d + 8)
    b_vertex = _polish(x, y, u, b, cand)
    if check_loss(y, x, b_vertex, u) <= check_loss(y, x, b, u):
        b = b_vertex
    gap = subgradient_gap(x, y, b, u)
    if gap > 0:
        # widen the exchange neighbourhood once before giving up
        b2 = _polish(x, y, u, b, min(T, 16 * d + 32))
        if check_loss(y, x, b2, u) <= check_loss(y, x, b, u):
            b = b2
        gap = subgradient_gap(x, y, b, u)
        if gap > 0:
            raise ConvergenceError(f"quantile regression at u={u} failed its optimality check", gap)
    return b


@dataclass(frozen=True, eq=False)
class QuantileGrid:
    """Quantile nodes with ``psi``-weighted product-integration weights.

    ``weights[i] = int psi(u) h_i(u) du`` where ``h_i`` is the piecewise-linear
    hat function of node ``i``, so ``sum_i weights[i] beta(u_i)`` integrates
    the linear interpolant of ``beta`` against ``psi`` exactly.
    """

    u: np.ndarray
    weights: np.ndarray
    eps: float
    truncated_mass: float


def build_quantile_grid(w: WeightingSpec, n_points: int = 99, eps: float = 0.01,
                        gauss_points: int = 16) -> QuantileGrid:
    """Equally spaced nodes on ``[eps, 1 - eps]`` plus every jump of ``psi``."""
    if not 0.0 < eps < 0.5:
        raise ParameterError("eps must lie in (0, 0.5)")
    if n_points < 2:
        raise ParameterError("need at least two grid points")
    nodes = np.linspace(eps, 1.0 - eps, n_points)
    jumps = [j for j in w.jumps if eps < j < 1.0 - eps]
    nodes = np.unique(np.concatenate([nodes, jumps]))
    t, gw = np.polynomial.legendre.leggauss(gauss_points)
    t = (t + 1.0) / 2.0
    gw = gw / 2.0
    weights = np.zeros(nodes.size)
    for i in range(nodes.size - 1):
        a, b = nodes[i], nodes[i + 1]
        uu = a + (b - a) * t
        pv = w.psi(uu) * gw * (b - a)
        weights[i] += np.sum(pv * (1.0 - t))
        weights[i + 1] += np.sum(pv * t)
    kept = float(w.Psi(1.0 - eps) - w.Psi(eps))
    return QuantileGrid(nodes, weights, eps, float(w.psi_bar - kept))


@dataclass(frozen=True, eq=False)
class ParametricResult:
    beta: np.ndarray
    path: np.ndarray = field(repr=False)
    grid: QuantileGrid = field(repr=False)
    failed_nodes: List[float] = field(default_factory=list)

    @property
    def truncated_mass(self):
        return self.grid.truncated_mass


def parametric_waqr(data: Dataset, w: WeightingSpec, grid: Optional[QuantileGrid] = None,
                    tol: float = DEFAULT_TOL) -> ParametricResult:
    """``sum_i weights_i * beta_tilde(u_i)`` over the quantile grid.

    Nodes with zero weight do not influence the estimate and are not fitted;
    their rows of ``path`` stay ``nan``. Nodes whose solver fails are filled by
    linear interpolation from the neighbouring fitted nodes; more than 10%
    failures raise :class:`ConvergenceError`.
    """
    if grid is None:
        grid = build_quantile_grid(w)
    active = np.flatnonzero(grid.weights != 0.0)
    path = np.full((grid.u.size, data.p), np.nan)
    failed = []
    for i in active:
        try:
            path[i] = quantile_regression(data, float(grid.u[i]), tol)
        except ConvergenceError:
            failed.append(float(grid.u[i]))
    if len(failed) > 0.1 * max(active.size, 1):
        raise ConvergenceError(f"{len(failed)} of {active.size} quantile fits failed")
    ok = ~np.isnan(path[:, 0])
    if failed:
        todo = np.isin(grid.u, failed)
        for j in range(data.p):
            path[todo, j] = np.interp(grid.u[todo], grid.u[ok], path[ok, j])
    beta = grid.weights[active] @ path[active]
    return ParametricResult(beta, path, grid, failed)


def appendix_c_oracle(beta, u):
    """Population quantile-regression slope for ``Y = X beta + X^2 (4U - 3)``.

    With ``X ~ U[0, 2]`` and ``U ~ U[0, 1]`` independent and no intercept, the
    minimiser of the expected check loss is ``beta - 6 + 4 sqrt(3u)`` for
    ``u < 3/4`` and ``beta + 2 - 4 sqrt(1 - u)`` otherwise.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ParameterError("u must lie in (0, 1)")
    out = np.where(u < 0.75, beta - 6.0 + 4.0 * np.sqrt(3.0 * u), beta + 2.0 - 4.0 * np.sqrt(1.0 - u))
    return float(out) if out.ndim == 0 else out


# 2 * int_{1/2}^1 appendix_c_oracle(beta, u) du - beta, integrated exactly
APPENDIX_C_BIAS = 10.0 / 3.0 - 8.0 / np.sqrt(6.0)
