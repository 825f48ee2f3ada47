"""Inverse problem: recover H (and so F) from samples of m(l) = int H(k) w(k + l) dk.

All solvers work in the variables weighted by the 7/4 line,

    f(k) = e^{7k/4} H(k),   v(j) = e^{-7j/4} w(j),   g(l) = e^{-7l/4} m(l),

where g(l) = int f(k) v(k + l) dk and both f and v are square integrable.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, IllConditionedError
from .nonlinearity import HTable, Nonlinearity, reconstruct_from_H
from .pairing import MeasurementDataset, exact_m
from .special import weight_laplace_W, weight_w

logger = logging.getLogger(__name__)

__all__ = [
    "RecoveredH",
    "PolyFit",
    "LINE",
    "design_matrix",
    "deconvolve_windowed",
    "deconvolve_fourier",
    "fit_polynomial",
    "detect_exponents",
    "check_nonvanishing",
    "recover_nonlinearity",
    "defect_corrected_recovery",
]

LINE = 1.75
_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


@dataclass
class RecoveredH:
    table: HTable
    regularization: float
    residual_norm: float
    amplitude_disc: float
    method: str = "windowed"
    tail_coef: complex = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.residual_norm >= 0:
            raise ValueError("residual norm must be non-negative")
        if not self.amplitude_disc > 0:
            raise ValueError("amplitude disc must be positive")

    def on_window(self):
        """(k, H) restricted to the reported window."""
        lo, hi = self.table.window
        sel = (self.table.k_grid >= lo - 1e-12) & (self.table.k_grid <= hi + 1e-12)
        return self.table.k_grid[sel], self.table.values[sel]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "regularization": self.regularization,
            "residual_norm": self.residual_norm,
            "amplitude_disc": self.amplitude_disc,
            "tail_coef": [complex(self.tail_coef).real, complex(self.tail_coef).imag],
            "window": list(self.table.window),
            "k": [float(v) for v in self.table.k_grid],
            "re_H": [float(v) for v in self.table.values.real],
            "im_H": [float(v) for v in self.table.values.imag],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveredH":
        table = HTable(d["k"], np.asarray(d["re_H"]) + 1j * np.asarray(d["im_H"]), tuple(d["window"]))
        tc = d.get("tail_coef", [0.0, 0.0])
        return cls(table, d["regularization"], d["residual_norm"], d["amplitude_disc"],
                   d.get("method", "windowed"), complex(tc[0], tc[1]), d.get("meta", {}))


@dataclass
class PolyFit:
    exponents: list
    coefficients: list
    condition_number: float
    residual_norm: float = 0.0

    def __post_init__(self):
        if len(set(self.exponents)) != len(self.exponents):
            raise ValueError("exponents must be distinct")
        if any(p < 2 for p in self.exponents):
            raise ValueError("exponents must be >= 2")

    def nonlinearity(self) -> Nonlinearity:
        from .nonlinearity import polynomial
        return polynomial(list(zip(self.coefficients, self.exponents)))


def _weighted_kernel(j):
    return np.exp(-LINE * j) * weight_w(j)


def _valid_arrays(ds: MeasurementDataset):
    ds = ds.valid()
    return ds, ds.ells, ds.values


def design_matrix(ells, nodes) -> np.ndarray:
    """A[i, j] = int hat_j(k) v(k + l_i) dk for piecewise-linear hats on ``nodes``.

    Gauss-Legendre on every cell, with the cell holding the kink k = -l split
    there (w is only C^1 at 0).
    """
    ells = np.asarray(ells, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    a, b = nodes[:-1], nodes[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    wq = half[:, None] * _GL_W[None, :]
    t = (x - a[:, None]) / (b - a)[:, None]
    A = np.zeros((len(ells), len(nodes)))
    for i, l in enumerate(ells):
        vals = _weighted_kernel((x + l).ravel()).reshape(x.shape) * wq
        left = np.sum(vals * (1 - t), axis=1)
        right = np.sum(vals * t, axis=1)
        kink = -l
        c = np.searchsorted(nodes, kink) - 1
        if 0 <= c < len(a) and a[c] < kink < b[c]:
            left[c] = right[c] = 0.0
            for s0, s1 in ((a[c], kink), (kink, b[c])):
                xs = 0.5 * (s1 + s0) + 0.5 * (s1 - s0) * _GL_X
                vs = _weighted_kernel(xs + l) * 0.5 * (s1 - s0) * _GL_W
                ts = (xs - a[c]) / (b[c] - a[c])
                left[c] += np.sum(vs * (1 - ts))
                right[c] += np.sum(vs * ts)
        A[i, :-1] += left
        A[i, 1:] += right
    return A


def _tail_column(ells, K):
    """e^{-7l/4} int_K^inf e^{-2k} w(k + l) dk for each l."""
    out = np.empty(len(ells))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for i, l in enumerate(ells):
            lo = max(K + l, 0.0)
            # integrand ~ e^{-j/2}; beyond lo + 100 it is below 1e-21 of the total
            val, _ = integrate.quad(lambda j: math.exp(-2.0 * j) * weight_w(j), lo, lo + 100.0,
                                    epsabs=0.0, epsrel=1e-12, limit=200)
            out[i] = math.exp(-LINE * l + 2.0 * l) * val
    return out


def deconvolve_windowed(ds: MeasurementDataset, k_window=None, reg: float = 1e-8, dk: float = 0.05,
                        k_cut: float | None = None, penalty: str = "d2", max_condition: float = 1e12,
                        tail_samples: int = 6) -> RecoveredH:
    """Tikhonov least squares for H on [-max l, k_cut] with an e^{-2k} tail beyond.

    The unknowns are the nodal values of f = e^{7k/4} H on a uniform grid of
    step about ``dk`` plus the tail coefficient c with H(k) = c e^{-2k} for
    k > k_cut.  ``reg`` is relative to ||A||_2^2.  ``penalty='d2'`` penalises
    second differences of f and ties f(k_cut) to the tail; ``'id'`` is plain
    ridge.  The returned table holds all nodes plus a few tail samples, with
    ``window`` set to ``k_window`` (default [-max l, -min l]).
    """
    ds, ells, m = _valid_arrays(ds)
    if len(ells) < 10:
        raise DomainError(f"need at least 10 valid measurements, got {len(ells)}")
    if np.ptp(ells) == 0:
        raise DomainError("all measurements share one l; the problem is degenerate")
    k_lo = -float(ells.max())
    if k_window is None:
        k_window = (k_lo, -float(ells.min()))
    kw_lo, kw_hi = map(float, k_window)
    if not kw_hi > kw_lo:
        raise DomainError("empty k window")
    if k_cut is None:
        k_cut = max(kw_hi, -float(ells.min())) + 1.0
    if kw_lo < k_lo - 1e-12 or kw_hi > k_cut + 1e-12:
        raise DomainError(f"k window must lie in [{k_lo:g}, {k_cut:g}]")
    n_cells = max(2, int(round((k_cut - k_lo) / dk)))
    nodes = np.linspace(k_lo, k_cut, n_cells + 1)

    # the tail unknown is f(k_cut) rather than c, which keeps the system shift covariant
    A = np.column_stack([design_matrix(ells, nodes), math.exp(0.25 * k_cut) * _tail_column(ells, k_cut)])
    d = np.exp(-LINE * ells) * m
    n = A.shape[1]
    scale = np.linalg.norm(A, 2) ** 2
    if penalty == "d2":
        L = np.zeros((n - 2, n))
        for r in range(n - 3):
            L[r, r:r + 3] = (1.0, -2.0, 1.0)
        # continuity of f at k_cut
        L[n - 3, n - 2] = 1.0
        L[n - 3, n - 1] = -1.0
    elif penalty == "id":
        L = np.eye(n)
    else:
        raise ValueError("penalty must be 'd2' or 'id'")
    M = np.vstack([A, math.sqrt(reg * scale) * L])
    cond = float(np.linalg.cond(M))
    if not cond <= max_condition:
        raise IllConditionedError(
            f"regularised system has condition number {cond:.3e} > {max_condition:.1e}; increase reg"
        )
    rhs = np.concatenate([d, np.zeros(L.shape[0])]).astype(complex)
    x = np.linalg.lstsq(M.astype(complex), rhs, rcond=None)[0]
    if np.all(np.isreal(m)):
        x = x.real.astype(complex)
    f, c = x[:-1], x[-1] * math.exp(0.25 * k_cut)
    H = f * np.exp(-LINE * nodes)
    k_tail = k_cut + dk * np.arange(1, tail_samples + 1)
    k_all = np.concatenate([nodes, k_tail])
    H_all = np.concatenate([H, c * np.exp(-2.0 * k_tail)])
    resid = float(np.linalg.norm(A @ x - d))
    table = HTable(k_all, H_all, (kw_lo, kw_hi), {"k_cut": k_cut, "dk": nodes[1] - nodes[0]})
    return RecoveredH(
        table, reg, resid, math.exp(float(ells.max()) / 2.0), "windowed", complex(c),
        {"condition_number": cond, "relative_residual": resid / max(np.linalg.norm(d), 1e-300),
         "penalty": penalty, "n_data": len(ells)},
    )


def _tail_extend_left(ells, g, pad, n_fit):
    # g ~ c0 e^{l/4} + c1 e^{5l/4} as l -> -inf (H ~ e^{-2k} + e^{-3k} for small lam)
    lf, gf = ells[:n_fit], g[:n_fit]
    X = np.column_stack([np.exp(lf / 4), np.exp(5 * lf / 4)]).astype(complex)
    co = np.linalg.lstsq(X, gf.astype(complex), rcond=None)[0]
    h = ells[1] - ells[0]
    n = int(round(pad / h))
    Lg = ells[0] - h * np.arange(n, 0, -1)
    ext = co[0] * np.exp(Lg / 4) + co[1] * np.exp(5 * Lg / 4)
    # fade out far to the left so the periodic wrap stays smooth
    ext = ext * 0.5 * (1 + np.tanh((Lg - (Lg[0] + pad / 3)) / (pad / 10)))
    return Lg, ext


def _extend_right(ells, g, pad, taper):
    h = ells[1] - ells[0]
    n = int(round(pad / h))
    R = ells[-1] + h * np.arange(1, n + 1)
    slope = (g[-1] - g[-2]) / h
    return R, (g[-1] + slope * (R - ells[-1])) * np.exp(-((R - ells[-1]) ** 2) / (2 * taper**2))


def deconvolve_fourier(ds: MeasurementDataset, band_limit: float = 24.0, reg: float = 0.0,
                       rolloff: str = "gaussian", extend: bool = True, pad_left: float = 60.0,
                       pad_right: float = 6.0, taper: float = 1.0, n_tail_fit: int = 5) -> RecoveredH:
    """Division by the symbol W(7/4 + i xi) on a uniform l grid.

    With g(l) = int f(k) v(k + l) dk the transforms satisfy
    g_hat(xi) = f_hat(-xi) W(7/4 + i xi), so f is the inverse transform of
    g_hat conj(W) / (|W|^2 + reg) times a spectral filter: exp(-(xi/band)^2)
    for ``rolloff='gaussian'`` or the indicator of |xi| <= band for ``'sharp'``.
    The smooth roll-off keeps the band-limited inverse kernel local, which a
    sharp cutoff does not (|W|^{-1} grows like |xi|^{5/2}).

    A finite window is not periodic.  With ``extend`` the data are continued
    to the left by the small-amplitude law c0 e^{l/4} + c1 e^{5l/4} and to the
    right by a Gaussian taper; the latter only affects f within a few
    1/band_limit of the lower window edge k = -max l.
    """
    ds, ells, m = _valid_arrays(ds)
    if len(ells) < 3:
        raise DomainError("need at least 3 valid measurements")
    steps = np.diff(ells)
    h = steps.mean()
    if np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise DomainError("Fourier deconvolution needs a uniform l grid")
    g = np.exp(-LINE * ells) * m
    full_l, full_g = ells, g.astype(complex)
    if extend:
        Lg, gl = _tail_extend_left(ells, g, pad_left, min(n_tail_fit, len(ells)))
        Rg, gr = _extend_right(ells, g, pad_right, taper)
        full_l = np.concatenate([Lg, ells, Rg])
        full_g = np.concatenate([gl, g, gr])
    N = len(full_g)
    xi = 2 * np.pi * np.fft.fftfreq(N, h)
    Wv = weight_laplace_W(LINE + 1j * xi)
    if rolloff == "gaussian":
        filt = np.exp(-((xi / band_limit) ** 2)) if band_limit > 0 else np.zeros(N)
    elif rolloff == "sharp":
        filt = (np.abs(xi) <= band_limit).astype(float)
    else:
        raise ValueError("rolloff must be 'gaussian' or 'sharp'")
    spec = np.fft.fft(full_g) * np.conj(Wv) / (np.abs(Wv) ** 2 + reg) * filt
    f = np.fft.fft(spec) / N
    # output index j sits at k = -l_0 - (N - j) h
    k = -full_l[0] - (N - np.arange(N)) * h
    if np.all(np.isreal(m)):
        f = f.real.astype(complex)
    k_lo, k_hi = -float(ells.max()), -float(ells.min())
    sel = (k >= k_lo - 1e-9) & (k <= k_hi + 1e-9)
    kk, H = k[sel], f[sel] * np.exp(-LINE * k[sel])
    table = HTable(kk, H, (k_lo, k_hi), {"band_limit": band_limit, "rolloff": rolloff})
    # residual of the forward model on the data grid
    A = design_matrix(ells, kk)
    resid = float(np.linalg.norm(A @ (H * np.exp(LINE * kk)) - g))
    return RecoveredH(table, reg, resid, math.exp(float(ells.max()) / 2.0), "fourier", 0.0,
                      {"band_limit": band_limit, "n_fft": N, "extended": extend})


def _poly_basis(ells, exponents):
    cols = []
    for r in exponents:
        z = (r + 2.0) / 2.0
        Wz = weight_laplace_W(z)
        if not (abs(Wz.imag) == 0 and Wz.real > 0):
            raise AssertionError(f"basis weight W({z:g}) = {Wz} is not positive")
        cols.append(z * Wz.real * np.exp(z * ells))
    return np.column_stack(cols) if cols else np.zeros((len(ells), 0))


def _row_weights(ds, ells, m, weights):
    if weights == "relative":
        mag = np.abs(m)
        return np.where(mag > 0, 1.0 / np.where(mag > 0, mag, 1.0), 0.0) if np.any(mag > 0) else np.ones(len(m))
    if weights == "residual":
        r = ds.residuals
        return np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 1.0)
    if weights == "none":
        return np.ones(len(m))
    raise ValueError("weights must be 'relative', 'residual' or 'none'")


def fit_polynomial(ds: MeasurementDataset, exponents: Sequence[float], weights: str = "relative",
                   max_condition: float = 1e12) -> PolyFit:
    """Least-squares fit m(l) = sum_p a_p (p+2)/2 W((p+2)/2) e^{(p+2) l / 2}.

    The returned coefficients are the a_p of F(u) = sum a_p |u|^p u.  Rows are
    weighted by 1/|m| by default so every decade of l counts.
    """
    exponents = [float(p) for p in exponents]
    if not exponents:
        raise DomainError("need at least one exponent")
    if any(p < 2 for p in exponents) or len(set(exponents)) != len(exponents):
        raise DomainError("exponents must be distinct and >= 2")
    ds, ells, m = _valid_arrays(ds)
    if len(ells) < 2 * len(exponents):
        raise DomainError(f"need at least {2 * len(exponents)} measurements, got {len(ells)}")
    if len(ells) and np.ptp(ells) == 0:
        raise DomainError("all measurements share one l; the exponential basis is rank one")
    B = _poly_basis(ells, exponents)
    wts = _row_weights(ds, ells, m, weights)
    Bw = B * wts[:, None]
    norms = np.linalg.norm(Bw, axis=0)
    Bn = Bw / norms
    cond = float(np.linalg.cond(Bn))
    if not cond <= max_condition:
        gram = np.abs(Bn.T @ Bn)
        np.fill_diagonal(gram, -1)
        i, j = np.unravel_index(np.argmax(gram), gram.shape)
        raise IllConditionedError(
            f"design matrix is rank deficient (cond {cond:.2e}); exponents "
            f"{exponents[i]!r} and {exponents[j]!r} are nearly collinear"
        )
    y = (m * wts).astype(complex)
    sol = np.linalg.lstsq(Bn.astype(complex), y, rcond=None)[0] / norms
    if np.all(np.isreal(m)):
        sol = sol.real.astype(complex)
    resid = float(np.linalg.norm(Bw @ sol - y) / max(np.linalg.norm(y), 1e-300))
    coefs = [complex(c) if c.imag != 0 else float(c.real) for c in sol]
    return PolyFit(exponents, coefs, cond, resid)


def _fit_residual(ds, ells, m, wts, exps):
    if not exps:
        return 1.0
    B = _poly_basis(ells, exps) * wts[:, None]
    y = (m * wts).astype(complex)
    sol = np.linalg.lstsq(B.astype(complex), y, rcond=None)[0]
    return float(np.linalg.norm(B @ sol - y) / np.linalg.norm(y))


def detect_exponents(ds: MeasurementDataset, dictionary: Sequence[float] = (2, 3, 4, 5, 6),
                     threshold: float = 1e-3, weights: str = "relative") -> list:
    """Greedy pursuit over the exponent dictionary, then backward pruning.

    Atoms are added while the relative residual drops by at least
    ``threshold``; ties go to the smaller exponent.  Afterwards any atom whose
    removal raises the residual by less than ``threshold`` is dropped, which
    undoes early picks that only approximated a pair of true atoms.
    """
    ds, ells, m = _valid_arrays(ds)
    if len(ells) == 0 or not np.any(np.abs(m) > 0):
        return []
    wts = _row_weights(ds, ells, m, weights)
    cand = sorted(float(p) for p in dictionary)
    chosen: list = []
    res = 1.0
    while len(chosen) < len(cand):
        best, best_res = None, res
        for p in cand:
            if p in chosen:
                continue
            r = _fit_residual(ds, ells, m, wts, chosen + [p])
            if r < best_res * (1 - 1e-9):
                best, best_res = p, r
        if best is None or res - best_res < threshold:
            break
        chosen.append(best)
        res = best_res
    pruned = True
    while pruned and len(chosen) > 1:
        pruned = False
        for p in sorted(chosen, reverse=True):
            rest = [q for q in chosen if q != p]
            r = _fit_residual(ds, ells, m, wts, rest)
            if r - res < threshold:
                chosen, res, pruned = rest, r, True
                break
    return sorted(chosen)


def check_nonvanishing(p: float, xi_max: float = 50.0, n: int = 4001):
    """min over |xi| <= xi_max of |W((p+2)/2 + i xi)| on a uniform scan."""
    if p < 2:
        raise DomainError("need p >= 2")
    xi = np.linspace(-xi_max, xi_max, n)
    vals = np.abs(weight_laplace_W((p + 2.0) / 2.0 + 1j * xi))
    return float(vals.min())


def recover_nonlinearity(rh: RecoveredH, lam_slack: float = 0.0, n_tail_fit: int = 6) -> Nonlinearity:
    """Nonlinearity on |u| <= amplitude_disc from a recovered H table."""
    nl = reconstruct_from_H(rh.table, n_tail_fit=n_tail_fit, label=f"recovered ({rh.method})",
                            lam_slack=lam_slack)
    return nl


def defect_corrected_recovery(ds: MeasurementDataset, simulate: Callable[[Nonlinearity], MeasurementDataset],
                              n_iter: int = 2, deconvolve: Callable | None = None,
                              lam_slack: float = 0.1, **kw):
    """Remove the simulator's Born defect from simulated data by fixed-point iteration.

    A simulated m carries a defect D[F] = m_sim[F] - m[F] (the Born error
    plus discretisation error).  Starting from a plain recovery F_0, repeat
    F_{n+1} = recover(m_data - D[F_n]); ``simulate`` must rerun the original
    campaign for a candidate nonlinearity.  D depends smoothly on F, so each
    pass shrinks the error by roughly the relative size of D.

    Returns (RecoveredH, history) where history lists the defect-update norms.
    """
    deconvolve = deconvolve or deconvolve_windowed
    ds = ds.valid()
    data = ds.values
    rh = deconvolve(ds, **kw)
    history = []
    prev = None
    for it in range(n_iter):
        cand = recover_nonlinearity(rh, lam_slack=lam_slack)
        sim = simulate(cand)
        sim_vals = {round(mm.ell, 12): mm for mm in sim.measurements}
        defect = np.zeros(len(ds), dtype=complex)
        keep = np.ones(len(ds), dtype=bool)
        for i, mm in enumerate(ds.measurements):
            s = sim_vals.get(round(mm.ell, 12))
            if s is None or not s.valid:
                keep[i] = False
                continue
            defect[i] = s.value - exact_m(cand, mm.ell)
        change = float(np.linalg.norm(defect - (prev if prev is not None else 0)) / np.linalg.norm(data))
        history.append(change)
        logger.info("defect correction pass %d: relative defect update %.3e", it + 1, change)
        prev = defect
        corrected = ds.with_values(data - defect)
        corrected = MeasurementDataset([mm for mm, k in zip(corrected.measurements, keep) if k],
                                       ds.nl_label, ds.convention, ds.params)
        rh = deconvolve(corrected, **kw)
    rh.meta["defect_history"] = history
    return rh, history
