"""Signed weighting functions on [0, 1].

A :class:`WeightingSpec` describes a weighting function ``psi`` over quantile
ranks together with its cumulative ``Psi(s) = int_0^s psi`` and total mass
``psi_bar = Psi(1)``. Built-in families have closed-form cumulatives; custom
tables are piecewise linear and integrated exactly.

All ``psi`` evaluations are right-continuous: at a jump the right limit is
returned (at ``u = 1`` the left limit, which is the only one available).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import NumericError, ParameterError

FAMILIES = (
    "upper",
    "lower",
    "middle",
    "inequality",
    "exponential",
    "polynomial",
    "welfare_exponential",
    "constant",
    "custom",
)

_MAX_CUSTOM_KNOTS = 10_000


@dataclass(frozen=True)
class WeightingSpec:
    """Immutable description of a weighting function.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    alpha : float, optional
        Tail fraction for ``upper``, ``lower``, ``middle`` and ``inequality``.
    a : float, optional
        Shape parameter for ``exponential``/``welfare_exponential`` (a > 0) and
        ``polynomial`` (a > 1).
    knots : tuple of (u, psi) pairs, optional
        Piecewise-linear table for ``custom``. The first knot must sit at 0 and
        the last at 1; a repeated ``u`` encodes a jump.
    """

    family: str
    alpha: Optional[float] = None
    a: Optional[float] = None
    knots: Optional[Tuple[Tuple[float, float], ...]] = field(default=None, repr=False)

    def __post_init__(self):
        fam = self.family.lower().replace("-", "_")
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise ParameterError(f"unknown weighting family {self.family!r}")
        if fam in ("upper", "lower", "middle", "inequality"):
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ParameterError(f"{fam} requires alpha in (0, 1), got {self.alpha}")
            if fam == "middle" and not self.alpha < 0.5:
                raise ParameterError("middle requires alpha < 0.5")
        elif fam in ("exponential", "welfare_exponential"):
            if self.a is None or not self.a > 0.0 or not np.isfinite(self.a):
                raise ParameterError(f"{fam} requires a > 0, got {self.a}")
            if self.a > 700.0:
                raise ParameterError("exponential parameter a > 700 overflows")
        elif fam == "polynomial":
            if self.a is None or not self.a > 1.0 or not np.isfinite(self.a):
                raise ParameterError(f"polynomial requires a > 1, got {self.a}")
        elif fam == "custom":
            self._check_knots()

    def _check_knots(self):
        if self.knots is None:
            raise ParameterError("custom family requires a knot table")
        tab = np.asarray(self.knots, dtype=float)
        if tab.ndim != 2 or tab.shape[1] != 2 or len(tab) < 2:
            raise ParameterError("knot table must be a list of (u, psi) pairs")
        if len(tab) > _MAX_CUSTOM_KNOTS:
            raise ParameterError(f"at most {_MAX_CUSTOM_KNOTS} knots are supported")
        u = tab[:, 0]
        if not np.all(np.isfinite(tab)):
            raise ParameterError("knot table contains non-finite values")
        if u[0] != 0.0 or u[-1] != 1.0:
            raise ParameterError("knots must start at u=0 and end at u=1")
        du = np.diff(u)
        if np.any(du < 0):
            raise ParameterError("knot abscissae must be non-decreasing")
        if np.any((du[1:] == 0) & (du[:-1] == 0)):
            raise ParameterError("at most two knots may share an abscissa")
        # Frozen copies so the cumulative table is computed once.
        cum = np.concatenate([[0.0], np.cumsum(du * (tab[1:, 1] + tab[:-1, 1]) / 2.0)])
        object.__setattr__(self, "_u", u)
        object.__setattr__(self, "_v", tab[:, 1].copy())
        object.__setattr__(self, "_cum", cum)

    # constructors -----------------------------------------------------

    @classmethod
    def upper(cls, alpha):
        return cls("upper", alpha=alpha)

    @classmethod
    def lower(cls, alpha):
        return cls("lower", alpha=alpha)

    @classmethod
    def middle(cls, alpha):
        return cls("middle", alpha=alpha)

    @classmethod
    def inequality(cls, alpha):
        return cls("inequality", alpha=alpha)

    @classmethod
    def exponential(cls, a):
        return cls("exponential", a=a)

    @classmethod
    def welfare_exponential(cls, a):
        return cls("welfare_exponential", a=a)

    @classmethod
    def polynomial(cls, a):
        return cls("polynomial", a=a)

    @classmethod
    def constant(cls):
        return cls("constant")

    @classmethod
    def custom(cls, knots):
        return cls("custom", knots=tuple((float(u), float(v)) for u, v in knots))

    @classmethod
    def from_file(cls, path):
        """Read a custom table from a CSV of ``u,psi`` rows (header optional)."""
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                try:
                    rows.append((float(parts[0]), float(parts[1])))
                except (ValueError, IndexError):
                    if rows:
                        raise ParameterError(f"bad knot row {line!r} in {path}")
        return cls.custom(rows)

    # evaluation -------------------------------------------------------

    def psi(self, u):
        """Evaluate the weighting function (vectorised, right-continuous)."""
        u = np.asarray(u, dtype=float)
        fam = self.family
        if fam == "upper":
            out = (u >= 1.0 - self.alpha) / self.alpha
        elif fam == "lower":
            out = np.where(u < self.alpha, 1.0 / self.alpha, 0.0)
            out = np.where(u >= 1.0, 0.0, out)
        elif fam == "middle":
            al = self.alpha
            out = ((u >= al) & (u < 1.0 - al)) / (1.0 - 2.0 * al)
        elif fam == "inequality":
            al = self.alpha
            out = ((u >= 1.0 - al).astype(float) - (u < al)) / al
        elif fam == "exponential":
            a = self.a
            out = a * np.exp(-a * (1.0 - u)) / -np.expm1(-a)
        elif fam == "welfare_exponential":
            # literally the exponential family at 1 - u, so the reflection is exact
            a = self.a
            out = a * np.exp(-a * (1.0 - (1.0 - u))) / -np.expm1(-a)
        elif fam == "polynomial":
            out = self.a * np.power(u, self.a - 1.0)
        elif fam == "constant":
            out = np.ones_like(u)
        else:
            out = self._custom_psi(u)
        return np.asarray(out, dtype=float)

    def Psi(self, s):
        """Closed-form cumulative ``int_0^s psi(u) du`` (vectorised)."""
        s = np.asarray(s, dtype=float)
        fam = self.family
        if fam == "upper":
            out = np.maximum(s - (1.0 - self.alpha), 0.0) / self.alpha
        elif fam == "lower":
            out = np.minimum(s, self.alpha) / self.alpha
        elif fam == "middle":
            al = self.alpha
            out = np.clip(s - al, 0.0, 1.0 - 2.0 * al) / (1.0 - 2.0 * al)
        elif fam == "inequality":
            al = self.alpha
            out = (np.maximum(s - (1.0 - al), 0.0) - np.minimum(s, al)) / al
        elif fam == "exponential":
            out = np.expm1(self.a * s) / np.expm1(self.a)
        elif fam == "welfare_exponential":
            out = np.expm1(-self.a * s) / np.expm1(-self.a)
        elif fam == "polynomial":
            out = np.power(s, self.a)
        elif fam == "constant":
            out = s + 0.0
        else:
            out = self._custom_Psi(s)
        # pin the endpoints exactly; the closed forms can be off by an ulp there
        out = np.where(s >= 1.0, self.psi_bar, np.where(s <= 0.0, 0.0, out))
        return np.asarray(out, dtype=float)

    @property
    def psi_bar(self):
        """Total mass ``Psi(1)``."""
        if self.family == "inequality":
            return 0.0
        if self.family == "custom":
            return float(self._cum[-1])
        return 1.0

    @property
    def jumps(self):
        """Discontinuity points of ``psi`` inside (0, 1)."""
        fam = self.family
        if fam == "upper":
            pts = [1.0 - self.alpha]
        elif fam == "lower":
            pts = [self.alpha]
        elif fam in ("middle", "inequality"):
            pts = sorted({self.alpha, 1.0 - self.alpha})
        elif fam == "custom":
            u = self._u
            pts = sorted(set(u[1:][np.diff(u) == 0.0]))
        else:
            pts = []
        return tuple(p for p in pts if 0.0 < p < 1.0)

    def describe(self):
        """Plain-dict echo of the spec, for reports."""
        out = {"family": self.family}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.a is not None:
            out["a"] = self.a
        if self.family == "custom":
            out["n_knots"] = len(self.knots)
        return out

    def _custom_psi(self, u):
        uk, vk = self._u, self._v
        i = np.clip(np.searchsorted(uk, u, side="right") - 1, 0, len(uk) - 2)
        span = uk[i + 1] - uk[i]
        frac = np.where(span > 0, (u - uk[i]) / np.where(span > 0, span, 1.0), 0.0)
        return vk[i] + frac * (vk[i + 1] - vk[i])

    def _custom_Psi(self, s):
        uk = self._u
        i = np.clip(np.searchsorted(uk, s, side="right") - 1, 0, len(uk) - 2)
        right = self._custom_psi(s)
        start = self._v[i]
        # after a repeated abscissa the segment starts at the second knot value
        return self._cum[i] + (s - uk[i]) * (start + right) / 2.0


def _check_unit(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ParameterError(f"{name} must lie in [0, 1]")
    return arr


def eval_psi(w: WeightingSpec, u):
    """``psi(u)``; scalar in, float out."""
    out = w.psi(_check_unit(u, "u"))
    return float(out) if out.ndim == 0 else out


def eval_Psi(w: WeightingSpec, s):
    """``Psi(s) = int_0^s psi``; scalar in, float out."""
    out = w.Psi(_check_unit(s, "s"))
    return float(out) if out.ndim == 0 else out


def psi_bar(w: WeightingSpec) -> float:
    return w.psi_bar


def _sigmoid_map(t):
    # u = t^2 / (t^2 + (1-t)^2) flattens endpoint singularities of q.
    den = t * t + (1.0 - t) ** 2
    return t * t / den, 2.0 * t * (1.0 - t) / den**2


def integrate_against_quantiles(
    w: WeightingSpec,
    q: Callable[[np.ndarray], np.ndarray],
    nodes: int = 2000,
    eps: float = 1e-10,
) -> float:
    """Compute ``int_0^1 q(u) psi(u) du``.

    The unit interval is cut at the jumps of ``psi`` and each piece is
    integrated by Gauss-Legendre after a sigmoidal change of variables, which
    tames the integrable endpoint singularities of quantile functions such as
    the normal or Student-t. ``nodes`` is the total node budget, split across
    pieces in proportion to their length (at least 32 per piece).

    Raises :class:`NumericError` if ``q`` is non-finite at a node inside
    ``(eps, 1 - eps)``; nodes closer to 0 or 1 than ``eps`` are dropped.
    """
    if nodes < 100:
        raise ParameterError("nodes must be >= 100")
    cuts = np.array([0.0, *w.jumps, 1.0])
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        n = max(32, int(round(nodes * (hi - lo))))
        t, wt = np.polynomial.legendre.leggauss(n)
        t = (t + 1.0) / 2.0
        wt = wt / 2.0
        phi, dphi = _sigmoid_map(t)
        u = lo + (hi - lo) * phi
        jac = (hi - lo) * dphi * wt
        with np.errstate(all="ignore"):
            qu = np.asarray(q(u), dtype=float)
        bad = ~np.isfinite(qu)
        if np.any(bad & (u > eps) & (u < 1.0 - eps)):
            raise NumericError("quantile function is non-finite inside the unit interval")
        qu = np.where(bad, 0.0, qu)
        # psi is evaluated strictly inside the piece, so jump conventions do not enter
        total += float(np.sum(qu * w.psi(u) * jac))
    return total
