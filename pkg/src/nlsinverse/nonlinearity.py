"""Gauge-invariant nonlinearities F(u) = h(|u|^2) u and their G, G', H forms.

With G(|u|^2) = F(u) conj(u) we have

    G(lam)  = lam h(lam)
    G'(lam) = h(lam) + lam h'(lam)
    H(k)    = G'(e^{-k}) e^{-k}

``H`` is the unknown of the inverse problem; :func:`reconstruct_from_H` maps a
tabulated ``H`` back to a nonlinearity on the amplitude disc it determines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, RangeError

__all__ = [
    "Nonlinearity",
    "HTable",
    "power_law",
    "polynomial",
    "saturating",
    "zero",
    "from_spec",
    "load_spec",
    "eval_F",
    "eval_G",
    "eval_G_prime",
    "eval_H",
    "tabulate_H",
    "reconstruct_from_H",
    "admissibility_constant",
]

DEFAULT_K_MIN = -200.0


@dataclass(frozen=True)
class Nonlinearity:
    """An admissible nonlinearity given by ``h`` and its derivative.

    ``h`` and ``h_prime`` must accept numpy arrays of non-negative reals and
    return complex (or real) arrays.  ``bound_C`` is the constant in
    |h'(lam)| <= C (1 + lam^{p/2 - 1}) when known.
    """

    h: Callable
    h_prime: Callable
    growth_p: float
    label: str = "custom"
    bound_C: float | None = None
    spec: dict | None = None
    k_min: float = DEFAULT_K_MIN
    lam_max: float = math.inf
    is_real: bool = True
    h_bulk: Callable | None = None

    def __post_init__(self):
        if not self.growth_p >= 2.0:
            raise DomainError(f"growth parameter must be >= 2, got {self.growth_p}")

    @property
    def s_p(self) -> float:
        """Critical regularity 1 - 2/p of the growth parameter."""
        return 1.0 - 2.0 / self.growth_p

    @property
    def amplitude_disc(self) -> float:
        """Largest |u| where the nonlinearity is defined (inf for closed forms)."""
        return math.sqrt(self.lam_max)

    def _h(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam > self.lam_max * (1 + 1e-12)):
            raise RangeError(
                f"|u|^2 = {lam.max():g} outside the validity window [0, {self.lam_max:g}]"
            )
        return np.asarray(self.h(lam), dtype=complex)

    def bulk_h(self, lam):
        """h for large grid arrays; a tabulated fast path when one is attached."""
        if self.h_bulk is None:
            return self.h(lam)
        lam = np.asarray(lam, dtype=float)
        if lam.size and lam.max() > self.lam_max * (1 + 1e-12):
            raise RangeError(f"|u|^2 = {lam.max():g} outside the validity window [0, {self.lam_max:g}]")
        return self.h_bulk(lam)

    def F(self, u):
        u = np.asarray(u, dtype=complex)
        return self._h(np.abs(u) ** 2) * u

    def G(self, lam):
        lam = np.asarray(lam, dtype=float)
        return lam * self._h(lam)

    def G_prime(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self._h(lam) + lam * np.asarray(self.h_prime(lam), dtype=complex)

    def H(self, k):
        k = np.asarray(k, dtype=float)
        if np.any(k < self.k_min):
            raise RangeError(f"k = {k.min():g} below configured k_min = {self.k_min:g}")
        lam = np.exp(-k)
        with np.errstate(over="ignore", invalid="ignore"):
            out = self.G_prime(lam) * lam
        if not np.all(np.isfinite(out)):
            raise RangeError("H(k) overflows; raise k_min")
        return out

    def to_json(self) -> str:
        if self.spec is None:
            raise ValueError(f"nonlinearity {self.label!r} has no serializable spec")
        return json.dumps(self.spec)


# -- constructors ----------------------------------------------------------


def _coef(a):
    if isinstance(a, (list, tuple)):
        return complex(a[0], a[1])
    return complex(a)


def _coef_json(a: complex):
    return a.real if a.imag == 0 else [a.real, a.imag]


def polynomial(terms: Sequence[tuple[complex, float]], label: str | None = None) -> Nonlinearity:
    """F(u) = sum a_p |u|^p u, i.e. h(lam) = sum a_p lam^{p/2}; each p >= 2."""
    terms = [(_coef(a), float(p)) for a, p in terms]
    for _, p in terms:
        if p < 2:
            raise DomainError(f"power {p} is not admissible (need p >= 2)")

    def h(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape, dtype=complex)
        for a, p in terms:
            out += a * lam ** (p / 2)
        return out

    def h_prime(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape, dtype=complex)
        for a, p in terms:
            if p == 2:
                out += a
            else:
                out += a * (p / 2) * lam ** (p / 2 - 1)
        return out

    growth = max((p for _, p in terms), default=2.0)
    C = sum(abs(a) * p / 2 for a, p in terms) or 0.0
    if label is None:
        label = " + ".join(f"{_fmt(a)}|u|^{p:g}u" for a, p in terms) or "zero"
    spec = {"type": "polynomial", "terms": [{"a": _coef_json(a), "p": p} for a, p in terms]}
    return Nonlinearity(
        h, h_prime, growth, label, bound_C=C, spec=spec,
        is_real=all(a.imag == 0 for a, _ in terms),
    )


def _fmt(a: complex) -> str:
    return f"{a.real:g}" if a.imag == 0 else f"({a.real:g}{a.imag:+g}i)"


def power_law(a: complex, p: float) -> Nonlinearity:
    """F(u) = a |u|^p u."""
    return polynomial([(a, p)])


def saturating(a: complex = 1.0) -> Nonlinearity:
    """h(lam) = a (1 - e^{-lam}); admissible with p = 2 since |h'| <= |a|."""
    a = _coef(a)

    def h(lam):
        return a * -np.expm1(-np.asarray(lam, dtype=float))

    def h_prime(lam):
        return a * np.exp(-np.asarray(lam, dtype=float))

    spec = {"type": "saturating", "a": _coef_json(a)}
    return Nonlinearity(h, h_prime, 2.0, f"{_fmt(a)}(1-e^-|u|^2)u", bound_C=abs(a), spec=spec,
                        is_real=a.imag == 0)


def zero() -> Nonlinearity:
    nl = polynomial([], label="zero")
    return Nonlinearity(nl.h, nl.h_prime, 2.0, "zero", bound_C=0.0, spec={"type": "zero"})


def from_spec(spec: dict) -> Nonlinearity:
    """Build a nonlinearity from its JSON description."""
    kind = spec.get("type")
    if kind == "polynomial":
        return polynomial([(t["a"], t["p"]) for t in spec["terms"]])
    if kind == "power_law":
        return power_law(spec["a"], spec["p"])
    if kind == "saturating":
        return saturating(spec.get("a", 1.0))
    if kind == "zero":
        return zero()
    if kind == "htable":
        table = HTable(spec["k"], np.asarray(spec["re_H"]) + 1j * np.asarray(spec["im_H"]))
        return reconstruct_from_H(table, spec.get("n_tail_fit", 6), spec.get("label", "reconstructed"),
                                  spec.get("lam_slack", 0.0))
    raise ValueError(f"unknown nonlinearity type {kind!r}")


def load_spec(path) -> Nonlinearity:
    with open(path) as fh:
        return from_spec(json.load(fh))


# -- evaluation ------------------------------------------------------------


def eval_F(nl: Nonlinearity, u):
    return nl.F(u)


def eval_G(nl: Nonlinearity, lam):
    return nl.G(lam)


def eval_G_prime(nl: Nonlinearity, lam):
    return nl.G_prime(lam)


def eval_H(nl: Nonlinearity, k):
    return nl.H(k)


def admissibility_constant(nl: Nonlinearity, lam=None) -> float:
    """Smallest C with |h'(lam)| <= C (1 + lam^{p/2-1}) on a log grid (spot check)."""
    if lam is None:
        lam = np.logspace(-8, 4, 2001)
        lam = lam[lam <= nl.lam_max]
    lam = np.asarray(lam, dtype=float)
    ratio = np.abs(nl.h_prime(lam)) / (1.0 + lam ** (nl.growth_p / 2 - 1))
    return float(ratio.max(initial=0.0))


# -- H tables --------------------------------------------------------------


@dataclass
class HTable:
    """Samples of H(k) on a strictly increasing grid."""

    k_grid: np.ndarray
    values: np.ndarray
    window: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.k_grid = np.asarray(self.k_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.k_grid.ndim != 1 or self.k_grid.shape != self.values.shape:
            raise ValueError("k_grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.k_grid) <= 0):
            raise ValueError("k_grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("H values must be finite")
        if self.window is None:
            self.window = (float(self.k_grid[0]), float(self.k_grid[-1])) if len(self.k_grid) else (0.0, 0.0)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("k,re_H,im_H\n")
            for k, v in zip(self.k_grid, self.values):
                fh.write(f"{float(k)!r},{float(v.real)!r},{float(v.imag)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "HTable":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1] + 1j * data[:, 2])


def tabulate_H(nl: Nonlinearity, k_grid) -> HTable:
    k_grid = np.asarray(k_grid, dtype=float)
    return HTable(k_grid, nl.H(k_grid))


def reconstruct_from_H(table: HTable, n_tail_fit: int = 6, label: str = "reconstructed",
                       lam_slack: float = 0.0) -> Nonlinearity:
    """Invert H(k) = G'(e^{-k}) e^{-k} on the table window.

    G'(lam) = H(-ln lam) / lam on [e^{-k_hi}, e^{-k_lo}].  G is obtained by
    integrating from lam = 0; below the window G'(mu)/mu is extrapolated by a
    line c0 + c1 mu fitted to the smallest-lam samples (c0 = 2 h'(0)).  The
    result is valid for |u|^2 <= e^{-k_lo}; ``lam_slack`` admits a relative
    overshoot of that bound, evaluated by extrapolating the spline.
    """
    k = table.k_grid
    if len(k) < 2:
        raise DomainError("H table window needs at least 2 grid points")
    H = table.values
    k_lo, k_hi = k[0], k[-1]
    lam_min, lam_max = math.exp(-k_hi), math.exp(-k_lo)

    n_fit = min(n_tail_fit, len(k))
    kf = k[-n_fit:]
    y = H[-n_fit:] * np.exp(2 * kf)
    if n_fit >= 3:
        X = np.column_stack([np.ones(n_fit), np.exp(-kf)])
        (c0, c1), *_ = np.linalg.lstsq(X.astype(complex), y, rcond=None)
    else:
        c0, c1 = y.mean(), 0.0
    G_min = c0 * lam_min**2 / 2 + c1 * lam_min**3 / 3

    spline = CubicSpline(k, H)
    anti = spline.antiderivative()
    anti_hi = anti(k_hi)

    def G_of(lam):
        # G(e^{-k}) = G(lam_min) + int_k^{k_hi} H
        return G_min + (anti_hi - anti(-np.log(lam)))

    def h(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape, dtype=complex)
        tail = lam < lam_min
        out[tail] = c0 * lam[tail] / 2 + c1 * lam[tail] ** 2 / 3
        body = ~tail
        out[body] = G_of(lam[body]) / lam[body]
        return out

    def h_prime(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape, dtype=complex)
        tail = lam < lam_min
        out[tail] = c0 / 2 + 2 * c1 * lam[tail] / 3
        body = ~tail
        lb = lam[body]
        Gp = spline(-np.log(lb)) / lb
        out[body] = (Gp - G_of(lb) / lb) / lb
        return out

    # the simulator evaluates h on whole grids every step; interpolate
    # q = h / lam (smooth, q(0) = c0 / 2) on a uniform table instead
    lam_hi = lam_max * (1.0 + lam_slack)
    lam_tab = np.linspace(0.0, lam_hi, 8193)
    q_tab = np.empty(lam_tab.shape, dtype=complex)
    q_tab[0] = c0 / 2
    q_tab[1:] = h(lam_tab[1:]) / lam_tab[1:]

    dq = np.diff(q_tab)
    inv_step = (len(lam_tab) - 1) / lam_hi

    def h_bulk(lam):
        # uniform table, so the cell index is arithmetic rather than a search
        lam = np.asarray(lam, dtype=float)
        x = np.minimum(lam * inv_step, len(dq) - 1e-9)
        i = x.astype(np.intp)
        return lam * (q_tab[i] + (x - i) * dq[i])

    # growth estimate from the log-slope of |h| at the top of the window
    p_est = 2.0
    lam_top = np.array([lam_max * 0.8, lam_max])
    ht = np.abs(h(lam_top))
    if np.all(ht > 0):
        slope = np.log(ht[1] / ht[0]) / np.log(lam_top[1] / lam_top[0])
        if np.isfinite(slope):
            p_est = max(2.0, 2.0 * slope)

    spec = {
        "type": "htable",
        "k": [float(v) for v in k],
        "re_H": [float(v) for v in H.real],
        "im_H": [float(v) for v in H.imag],
        "n_tail_fit": n_tail_fit,
        "lam_slack": lam_slack,
        "label": label,
    }
    return Nonlinearity(
        h, h_prime, p_est, label, spec=spec,
        k_min=float(k_lo) - math.log1p(lam_slack), lam_max=lam_max * (1.0 + lam_slack),
        is_real=bool(np.all(H.imag == 0)), h_bulk=h_bulk,
    )
