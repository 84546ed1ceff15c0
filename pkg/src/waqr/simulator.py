"""Monte Carlo designs, population parameters and coverage experiments.

Designs (``X^1 = |Z_1|``, ``X^j = Z_j`` for ``j >= 2``, ``Z`` standard normal,
``eps`` independent of ``X``):

* ``DGP1``: ``Y = eps - X' beta_bar``
* ``DGP2``: ``Y = (1 + 0.2 X^1) eps - X' beta_bar``

Both satisfy ``int q_{Y|X}(u) psi(u) du = c + X' beta`` with intercept
``c = int q_eps psi`` and slopes ``-beta_bar * psi_bar``, plus ``0.2 c`` on the
first slope under ``DGP2``. Regressions therefore include an intercept.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import hashlib
import json
import math
import os
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from .dataset import Dataset
from .errors import ParameterError, WaqrError
from .estimator import FitConfig, confidence_intervals, waqr_crossfit, waqr_fit
from .rng import STREAM_DATA, stream
from .weighting import WeightingSpec, integrate_against_quantiles

PSI_TYPES = {
    1: WeightingSpec.upper(0.1),
    2: WeightingSpec.inequality(0.1),
    3: WeightingSpec.middle(0.2),
    4: WeightingSpec.exponential(1.0),
}

MAX_FAILURE_SHARE = 0.02


def psi_type(k: int) -> WeightingSpec:
    """Weighting function behind table column ``psi``-type ``k``."""
    try:
        return PSI_TYPES[int(k)]
    except KeyError:
        raise ParameterError(f"psi-type must be one of {sorted(PSI_TYPES)}") from None


@dataclass(frozen=True)
class SimConfig:
    dgp: str = "DGP1"
    noise: str = "normal"
    p: int = 2
    beta_bar: Tuple[float, ...] = (0.0, 0.5)
    T: int = 1000
    reps: int = 500
    psi: WeightingSpec = field(default_factory=lambda: PSI_TYPES[1])
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    level: float = 0.9

    def __post_init__(self):
        dgp = self.dgp.upper()
        noise = self.noise.lower().replace("(", "").replace(")", "")
        if noise in ("t4", "studentt4", "student_t4", "t"):
            noise = "t4"
        object.__setattr__(self, "dgp", dgp)
        object.__setattr__(self, "noise", noise)
        object.__setattr__(self, "beta_bar", tuple(float(b) for b in self.beta_bar))
        if dgp not in ("DGP1", "DGP2"):
            raise ParameterError("dgp must be DGP1 or DGP2")
        if noise not in ("normal", "t4"):
            raise ParameterError("noise must be normal or t4")
        if self.p < 1 or len(self.beta_bar) != self.p:
            raise ParameterError("beta_bar must have p entries")
        if self.T < 10 or self.reps < 1:
            raise ParameterError("need T >= 10 and reps >= 1")

    @classmethod
    def table_cell(cls, psi_kind, dgp, noise, p, T, beta1=0.0, **kw):
        """Configuration of one cell of the coverage/MAE tables."""
        beta_bar = (beta1, 0.5) + (0.0,) * (p - 2)
        return cls(dgp=dgp, noise=noise, p=p, beta_bar=beta_bar, T=T, psi=psi_type(psi_kind), **kw)

    def key(self) -> str:
        """Stable hash of everything that determines the per-rep results."""
        payload = asdict(self)
        payload.pop("reps")
        payload["psi"] = self.psi.describe()
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def noise_quantile(noise: str):
    if noise == "normal":
        return stats.norm.ppf
    return lambda u: stats.t.ppf(u, 4)


def gen_dgp(cfg: SimConfig, rep_index: int) -> Dataset:
    """Draw replication ``rep_index``; the design carries an intercept column."""
    rng = stream(cfg.seed, rep_index, STREAM_DATA)
    z = rng.standard_normal((cfg.T, cfg.p))
    x = z.copy()
    x[:, 0] = np.abs(z[:, 0])
    if cfg.noise == "normal":
        eps = rng.standard_normal(cfg.T)
    else:
        eps = rng.standard_t(4, cfg.T)
    scale = 1.0 + 0.2 * x[:, 0] if cfg.dgp == "DGP2" else 1.0
    y = scale * eps - x @ np.asarray(cfg.beta_bar)
    names = ("const",) + tuple(f"x{j + 1}" for j in range(cfg.p))
    return Dataset(np.column_stack([np.ones(cfg.T), x]), y, time_ordered=False, names=names)


def true_beta(cfg: SimConfig, w: Optional[WeightingSpec] = None, nodes: int = 4000) -> np.ndarray:
    """Population coefficients ``(intercept, slopes)`` for the design in ``cfg``."""
    w = cfg.psi if w is None else w
    level = integrate_against_quantiles(w, noise_quantile(cfg.noise), nodes)
    slopes = -np.asarray(cfg.beta_bar) * w.psi_bar
    if cfg.dgp == "DGP2":
        slopes[0] += 0.2 * level
    return np.concatenate([[level], slopes])


@dataclass(frozen=True, eq=False)
class McReport:
    """Aggregated coverage and mean absolute error for ``beta_1``."""

    coverage: float
    mae: float
    reps: int
    failures: int
    coverage_se: float
    mae_se: float
    true_beta1: float
    estimates: np.ndarray
    std_errors: np.ndarray
    hits: np.ndarray
    cell: dict

    def row(self):
        out = dict(self.cell)
        out.update(
            coverage=self.coverage,
            coverage_se=self.coverage_se,
            mae=self.mae,
            mae_se=self.mae_se,
            reps=self.reps,
            failures=self.failures,
            true_beta1=self.true_beta1,
        )
        return out


def _one_rep(args):
    cfg, rep, estimator, beta1 = args
    data = gen_dgp(cfg, rep)
    fitter = waqr_crossfit if estimator == "crossfit" else waqr_fit
    try:
        fit = fitter(data, cfg.psi, cfg.fit, seed=cfg.seed * 1_000_003 + rep)
    except (WaqrError, np.linalg.LinAlgError) as exc:
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}
    lo, hi = confidence_intervals(fit, cfg.level)[1]
    return {
        "rep": rep,
        "beta1": float(fit.beta_hat[1]),
        "se1": float(fit.std_errors[1]),
        "hit": bool(lo <= beta1 <= hi),
    }


def _workers():
    try:
        return max(1, int(os.environ.get("WAQR_THREADS", "1")))
    except ValueError:
        return 1


def run_mc(cfg: SimConfig, estimator_choice: str = "split", cache_dir=None, workers=None,
           progress=None) -> McReport:
    """Replicate ``cfg.reps`` fits and aggregate coverage and MAE of ``beta_1``.

    Each replication depends only on ``(cfg, rep)``, so results are identical
    whatever the worker count. With ``cache_dir`` every finished replication is
    appended to a JSON-lines file keyed by the configuration hash and reused on
    the next call, which makes long runs resumable.
    """
    if estimator_choice not in ("split", "crossfit"):
        raise ParameterError("estimator_choice must be 'split' or 'crossfit'")
    beta1 = float(true_beta(cfg)[1])
    done = {}
    cache_file = None
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        cache_file = Path(cache_dir) / f"{cfg.key()}-{estimator_choice}.jsonl"
        if cache_file.exists():
            for line in cache_file.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    if rec["rep"] < cfg.reps:
                        done[rec["rep"]] = rec
    todo = [(cfg, r, estimator_choice, beta1) for r in range(cfg.reps) if r not in done]
    n_workers = workers or _workers()

    def _record(rec):
        done[rec["rep"]] = rec
        if cache_file is not None:
            with open(cache_file, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
        if progress is not None:
            progress(len(done), cfg.reps)

    if n_workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            for rec in pool.map(_one_rep, todo, chunksize=1):
                _record(rec)
    else:
        for args in todo:
            _record(_one_rep(args))

    recs = [done[r] for r in range(cfg.reps)]
    good = [r for r in recs if "error" not in r]
    failures = len(recs) - len(good)
    if failures > MAX_FAILURE_SHARE * cfg.reps:
        first = next(r["error"] for r in recs if "error" in r)
        raise WaqrError(f"{failures} of {cfg.reps} replications failed; first: {first}")
    est = np.array([r["beta1"] for r in good])
    se = np.array([r["se1"] for r in good])
    hits = np.array([r["hit"] for r in good], dtype=bool)
    n = len(good)
    cov = math.fsum(hits.astype(float)) / n
    abs_err = np.abs(est - beta1)
    mae = math.fsum(abs_err) / n
    mae_se = float(np.std(abs_err, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    cell = {
        "dgp": cfg.dgp,
        "noise": cfg.noise,
        "p": cfg.p,
        "T": cfg.T,
        "beta_bar1": cfg.beta_bar[0],
        "psi": json.dumps(cfg.psi.describe(), sort_keys=True),
        "estimator": estimator_choice,
    }
    return McReport(
        coverage=cov,
        mae=mae,
        reps=n,
        failures=failures,
        coverage_se=math.sqrt(cov * (1.0 - cov) / n),
        mae_se=mae_se,
        true_beta1=beta1,
        estimates=est,
        std_errors=se,
        hits=hits,
        cell=cell,
    )


def appendix_c_data(T: int, beta: float = 1.0, seed: int = 0) -> Dataset:
    """``Y = X beta + X^2 (4U - 3)``, ``X ~ U[0, 2]``, no intercept column."""
    rng = stream(seed, 0, STREAM_DATA)
    x = rng.uniform(0.0, 2.0, T)
    u = rng.uniform(0.0, 1.0, T)
    y = x * beta + x**2 * (4.0 * u - 3.0)
    return Dataset(x[:, None], y, time_ordered=False, names=("x",))
