"""Flat ``key = value`` configuration files.

One setting per line, ``#`` starts a comment, keys are dotted
(``psi.family``, ``cdf.n_trees``, ``fit.split_ratio``, ...). Unknown keys
and unparsable values raise :class:`~waqr.errors.ConfigError` so typos do not
pass silently.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

from .cdf import CdfConfig
from .errors import ConfigError, ParameterError
from .estimator import FitConfig
from .weighting import WeightingSpec


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v):
    return None if v.strip().lower() in ("", "none", "auto") else int(v)


def _int_tuple(v):
    return tuple(int(s) for s in v.replace(",", " ").split())


def _float_tuple(v):
    return tuple(float(s) for s in v.replace(",", " ").split())


def _lag(v):
    return "auto" if v.strip().lower() == "auto" else int(v)


KEYS = {
    "psi.family": str,
    "psi.alpha": float,
    "psi.a": float,
    "psi.custom_file": str,
    "cdf.n_trees": int,
    "cdf.leaf_candidates": _int_tuple,
    "cdf.mtry": _opt_int,
    "cdf.bins_override": _opt_int,
    "cdf.leaf_size": _opt_int,
    "cdf.seed": _opt_int,
    "transform.max_grid_points": int,
    "fit.split_ratio": float,
    "fit.nw_lag": _lag,
    "fit.nw_divisor": str,
    "fit.add_intercept": _bool,
    "fit.crossfit": _bool,
    "fit.crossfit_ratio": float,
    "fit.crossfit_combine": str,
    "fit.seed": int,
    "fit.level": float,
    "cmp.grid_points": int,
    "cmp.trunc_eps": float,
    "cmp.tol": float,
    "sim.dgp": str,
    "sim.noise": str,
    "sim.p": int,
    "sim.T": int,
    "sim.reps": int,
    "sim.beta_bar": _float_tuple,
    "sim.psi_type": int,
    "sim.estimator": str,
}


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into ``{key: typed value}``."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def load(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, str(path))


@dataclass(frozen=True)
class RunSettings:
    """Everything the CLI needs besides the input data."""

    psi: WeightingSpec = field(default_factory=WeightingSpec.constant)
    fit: FitConfig = field(default_factory=FitConfig)
    add_intercept: bool = True
    crossfit: bool = False
    seed: int = 0
    cmp_grid_points: int = 99
    cmp_trunc_eps: float = 0.01
    cmp_tol: float = 1e-8
    sim: dict = field(default_factory=dict)


def psi_from_values(family: Optional[str], alpha=None, a=None, custom_file=None) -> WeightingSpec:
    family = (family or ("custom" if custom_file else "constant")).lower()
    try:
        if family == "custom":
            if not custom_file:
                raise ConfigError("psi.family = custom needs psi.custom_file")
            return WeightingSpec.from_file(custom_file)
        return WeightingSpec(family, alpha=alpha, a=a)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def settings_from(values: dict) -> RunSettings:
    """Build :class:`RunSettings` from parsed key/value pairs."""
    v = dict(values)
    try:
        psi = psi_from_values(v.get("psi.family"), v.get("psi.alpha"), v.get("psi.a"), v.get("psi.custom_file"))
        cdf_kw = {}
        for key, name in (("cdf.n_trees", "n_trees"), ("cdf.leaf_candidates", "leaf_candidates"),
                          ("cdf.mtry", "mtry"), ("cdf.bins_override", "bins_override"),
                          ("cdf.leaf_size", "leaf_size")):
            if key in v:
                cdf_kw[name] = v[key]
        fit_kw = {"cdf": CdfConfig(**cdf_kw)}
        for key, name in (("fit.split_ratio", "split_ratio"), ("fit.nw_lag", "nw_lag"),
                          ("fit.nw_divisor", "nw_divisor"), ("fit.level", "level"),
                          ("fit.crossfit_ratio", "crossfit_ratio"),
                          ("fit.crossfit_combine", "crossfit_combine"),
                          ("transform.max_grid_points", "max_grid_points")):
            if key in v:
                fit_kw[name] = v[key]
        fit = FitConfig(**fit_kw)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    # a dedicated forest seed wins over the general one
    seed = v.get("cdf.seed")
    if seed is None:
        seed = v.get("fit.seed", 0)
    sim = {k[4:]: val for k, val in v.items() if k.startswith("sim.")}
    return RunSettings(
        psi=psi,
        fit=fit,
        add_intercept=v.get("fit.add_intercept", True),
        crossfit=v.get("fit.crossfit", False),
        seed=int(seed),
        cmp_grid_points=v.get("cmp.grid_points", 99),
        cmp_trunc_eps=v.get("cmp.trunc_eps", 0.01),
        cmp_tol=v.get("cmp.tol", 1e-8),
        sim=sim,
    )


def override(settings: RunSettings, **changes) -> RunSettings:
    """Copy of ``settings`` with the non-``None`` entries of ``changes`` applied."""
    return replace(settings, **{k: val for k, val in changes.items() if val is not None})


__all__: Tuple[str, ...] = ("KEYS", "RunSettings", "load", "override", "parse_text", "psi_from_values", "settings_from")
