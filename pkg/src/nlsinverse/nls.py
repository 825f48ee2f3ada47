"""Pseudo-spectral solver for i u_t + Lap u = F(u) on a periodic square.

The periodic box [-L, L)^2 stands in for R^2; the boundary-mass diagnostic
flags runs where the solution reaches the edge.  Time stepping is Strang
splitting between the exact free flow (a Fourier multiplier) and the pointwise
flow of i u_t = h(|u|^2) u.

Conventions: e^{it Lap} is the multiplier exp(-i t |xi|^2) and the L^2 inner
product is <f, g> = int f conj(g).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import DomainError, SimulationGuardError
from .nonlinearity import Nonlinearity

logger = logging.getLogger(__name__)

__all__ = [
    "Grid2D",
    "Field",
    "EvolutionConfig",
    "Trajectory",
    "PicardResult",
    "free_propagate",
    "splitstep_evolve",
    "free_tail",
    "picard_iterate",
    "wave_operator",
    "scattering_map",
    "strichartz_norms",
    "spacetime_norm",
    "grid_for_gaussian",
]


def _fft(u):
    return sfft.fft2(u, workers=-1)


def _ifft(u):
    return sfft.ifft2(u, workers=-1)


@dataclass(frozen=True)
class Grid2D:
    """N x N periodic grid on [-L, L)^2."""

    L: float
    N: int

    def __post_init__(self):
        if self.L <= 0:
            raise DomainError("half length must be positive")
        if self.N < 2 or self.N & (self.N - 1):
            raise DomainError(f"points per side must be a power of two, got {self.N}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def nyquist(self) -> float:
        return math.pi * self.N / (2.0 * self.L)

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    @cached_property
    def x(self) -> np.ndarray:
        return -self.L + self.spacing * np.arange(self.N)

    @cached_property
    def r2(self) -> np.ndarray:
        x = self.x
        return x[:, None] ** 2 + x[None, :] ** 2

    @cached_property
    def k2(self) -> np.ndarray:
        k = 2.0 * np.pi * sfft.fftfreq(self.N, d=self.spacing)
        return k[:, None] ** 2 + k[None, :] ** 2

    def to_dict(self) -> dict:
        return {"L": self.L, "N": self.N}


def grid_for_gaussian(sigma: float, T: float, N: int = 512, margin: float = 7.0) -> Grid2D:
    """Box sized from the Gaussian spreading law.

    The probe's intensity at time T has width sigma (1 + T^2/sigma^4)^{1/2};
    ``margin`` such widths fit inside radius L/2, which keeps the mass outside
    L/2 below ~exp(-margin^2 / 2).
    """
    width = sigma * math.sqrt(1.0 + (T / sigma**2) ** 2)
    return Grid2D(2.0 * margin * width, N)


@dataclass
class Field:
    grid: Grid2D
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.shape != (self.grid.N, self.grid.N):
            raise ValueError(f"samples must be {self.grid.N}x{self.grid.N}")

    @classmethod
    def gaussian(cls, grid: Grid2D, A: float, sigma: float) -> "Field":
        return cls(grid, A * np.exp(-grid.r2 / (4.0 * sigma**2)))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "Field":
        return cls(grid, np.zeros((grid.N, grid.N), dtype=complex))

    def mass(self) -> float:
        return float(self.grid.cell_area * np.sum(np.abs(self.samples) ** 2))

    def norm(self) -> float:
        return math.sqrt(self.mass())

    def lp_norm(self, p: float) -> float:
        return float((self.grid.cell_area * np.sum(np.abs(self.samples) ** p)) ** (1.0 / p))

    def linf(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def inner(self, other: "Field") -> complex:
        """<self, other> = int self conj(other)."""
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return complex(self.grid.cell_area * np.vdot(other.samples, self.samples))

    def boundary_mass_fraction(self) -> float:
        total = np.sum(np.abs(self.samples) ** 2)
        if total == 0:
            return 0.0
        outside = self.grid.r2 > (self.grid.L / 2) ** 2
        return float(np.sum(np.abs(self.samples[outside]) ** 2) / total)

    def __sub__(self, other: "Field") -> "Field":
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return Field(self.grid, self.samples - other.samples)

    def __add__(self, other: "Field") -> "Field":
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return Field(self.grid, self.samples + other.samples)


def free_propagate(f: Field, t: float) -> Field:
    """Apply e^{it Lap}; exactly unitary on the grid."""
    if t == 0:
        return Field(f.grid, f.samples.copy())
    return Field(f.grid, _ifft(_fft(f.samples) * np.exp(-1j * t * f.grid.k2)))


@dataclass
class EvolutionConfig:
    T: float
    dt: float
    nl: Nonlinearity
    guard_factor: float = 100.0
    boundary_tol: float = 1e-8

    def __post_init__(self):
        if not 0 < self.dt < self.T:
            raise DomainError(f"need 0 < dt < T, got dt={self.dt}, T={self.T}")


@dataclass
class Trajectory:
    """Node times, per-node norms and (optionally) the fields themselves."""

    times: np.ndarray
    fields: list | None = None
    l2: np.ndarray | None = None
    linf: np.ndarray | None = None
    lp: dict = field(default_factory=dict)


def _nonlinear_substep(nl: Nonlinearity, u: np.ndarray, tau: float) -> np.ndarray:
    if nl.is_real:
        # |u| is invariant, so the pointwise flow is an exact phase rotation
        return u * np.exp(-1j * tau * nl.bulk_h(np.abs(u) ** 2).real)

    def rhs(v):
        return -1j * nl.bulk_h(np.abs(v) ** 2) * v

    k1 = rhs(u)
    k2 = rhs(u + 0.5 * tau * k1)
    k3 = rhs(u + 0.5 * tau * k2)
    k4 = rhs(u + tau * k3)
    return u + tau / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _march(cfg: EvolutionConfig, u0: np.ndarray, grid: Grid2D, t0: float, t1: float):
    """Yield (t, u) at every Strang node, starting with (t0, u0)."""
    span = t1 - t0
    n = max(1, int(math.ceil(abs(span) / cfg.dt - 1e-9)))
    h = span / n
    half = np.exp(-0.5j * h * grid.k2)
    u = u0
    uhat = _fft(u)
    yield t0, u
    for j in range(1, n + 1):
        v = _ifft(uhat * half)
        v = _nonlinear_substep(cfg.nl, v, h)
        uhat = _fft(v) * half
        u = _ifft(uhat)
        yield t0 + j * h, u


def _guard(cfg, u, linf0, t):
    linf = float(np.max(np.abs(u)))
    if not np.isfinite(linf) or (linf0 > 0 and linf > cfg.guard_factor * linf0):
        raise SimulationGuardError(
            f"L^inf grew from {linf0:.3e} to {linf:.3e} by t={t:.3g}; data not small",
            {"t": t, "linf0": linf0, "linf": linf},
        )
    return linf


def splitstep_evolve(cfg: EvolutionConfig, f0: Field, t0: float = 0.0, t1: float | None = None,
                     capture: bool = False, capture_stride: int = 1, lp_exponents=()):
    """Strang split-step evolution from ``t0`` to ``t1`` (default ``cfg.T``).

    Returns the final :class:`Field`, or ``(field, trajectory)`` when
    ``capture`` is set.  ``lp_exponents`` lists spatial L^r norms to record
    at every node even when fields are not stored.
    """
    if t1 is None:
        t1 = t0 + cfg.T
    if abs(t1 - t0) < cfg.dt * (1 - 1e-12):
        raise DomainError("evolution span shorter than one time step")
    grid = f0.grid
    linf0 = f0.linf()
    times, l2, linf, fields = [], [], [], []
    lp = {r: [] for r in lp_exponents}
    for step, (t, u) in enumerate(_march(cfg, f0.samples, grid, t0, t1)):
        li = _guard(cfg, u, linf0, t)
        if capture:
            times.append(t)
            l2.append(math.sqrt(grid.cell_area * np.sum(np.abs(u) ** 2)))
            linf.append(li)
            for r in lp:
                lp[r].append((grid.cell_area * np.sum(np.abs(u) ** r)) ** (1.0 / r))
            if step % capture_stride == 0:
                fields.append(u.copy())
    out = Field(grid, u)
    out.meta["boundary_mass"] = out.boundary_mass_fraction()
    out.meta["valid"] = out.meta["boundary_mass"] < cfg.boundary_tol
    if not capture:
        return out
    traj = Trajectory(np.array(times), fields, np.array(l2), np.array(linf),
                      {r: np.array(v) for r, v in lp.items()})
    if capture_stride != 1:
        traj.times_fields = np.array(times)[::capture_stride]
    return out, traj


def free_tail(phi: Field, nl: Nonlinearity, T: float, direction: int = 1, nodes: int = 12) -> Field:
    """int_T^inf e^{-it Lap} F(e^{it Lap} phi) dt (``direction=-1``: over (-inf, -T]).

    Uses e^{it Lap} = M_t D_t Fourier M_t with the chirp M_t = e^{i|x|^2/4t}, so
    that e^{-it Lap} F(e^{it Lap} phi) = conj(M_t) IFFT[h(|g_hat|^2/(16 pi^2 t^2)) g_hat],
    g = M_t phi.  The far-field solution never has to fit on the grid.  The
    time integral is done in tau = 1/|t| with Gauss-Legendre nodes.
    """
    grid = phi.grid
    if T <= 0:
        raise DomainError("tail start must be positive")
    x, w = np.polynomial.legendre.leggauss(nodes)
    tau = 0.5 / T * (x + 1.0)
    wts = 0.5 / T * w
    area = grid.cell_area
    acc = np.zeros_like(phi.samples)
    for tk, wk in zip(tau, wts):
        t = direction / tk
        chirp = np.exp(1j * grid.r2 / (4.0 * t))
        ghat = _fft(chirp * phi.samples)
        lam = np.abs(area * ghat) ** 2 / (16.0 * math.pi**2 * t * t)
        psi = np.conj(chirp) * _ifft(nl.bulk_h(lam) * ghat)
        acc += wk / tk**2 * psi
    return Field(grid, acc)


def _power_law_tail(times, norms):
    """Bound on int_T^inf ||F(u(t))|| dt from a power fit over the last decade."""
    T = times[-1]
    sel = (times >= T / 10.0) & (norms > 0)
    if sel.sum() < 3 or T <= 0:
        return math.inf, float("nan")
    slope, icpt = np.polyfit(np.log(times[sel]), np.log(norms[sel]), 1)
    alpha = -slope
    if alpha <= 1.0:
        return math.inf, alpha
    return float(norms[-1] * T / (alpha - 1.0)), alpha


def wave_operator(cfg: EvolutionConfig, u0: Field, tail: str = "free", tail_nodes: int = 12,
                  tail_tol: float | None = None) -> Field:
    """Omega_F(u0) = u0 - i int_0^inf e^{-it Lap} F(u(t)) dt.

    The integral over [0, T] is the trapezoid rule at the split-step nodes.
    With ``tail='free'`` the remainder over [T, inf) is added assuming free
    flow from the state reached at T (see :func:`free_tail`); the neglected
    part is quadratic in the nonlinearity.  ``meta`` of the result carries
    ``tail_bound`` (power-law bound of the whole uncorrected tail),
    ``tail_residual`` (estimate of what the free-tail correction misses) and
    the boundary-mass and consistency diagnostics.
    """
    if tail not in ("free", "none"):
        raise ValueError("tail must be 'free' or 'none'")
    grid = u0.grid
    nl = cfg.nl
    k2 = grid.k2
    linf0 = u0.linf()
    acc = np.zeros_like(u0.samples)
    prev = None
    times, fnorms = [], []
    for t, u in _march(cfg, u0.samples, grid, 0.0, cfg.T):
        _guard(cfg, u, linf0, t)
        Fu = nl.bulk_h(np.abs(u) ** 2) * u
        Fhat = _fft(Fu) * np.exp(1j * t * k2)
        if prev is not None:
            acc += 0.5 * (t - prev[0]) * (Fhat + prev[1])
        prev = (t, Fhat)
        times.append(t)
        fnorms.append(math.sqrt(grid.cell_area * np.sum(np.abs(Fu) ** 2)))
    duhamel = _ifft(acc)
    uT = Field(grid, u)
    times, fnorms = np.array(times), np.array(fnorms)
    bound, alpha = _power_law_tail(times, fnorms)

    out = u0.samples - 1j * duhamel
    asymptotic = free_propagate(uT, -cfg.T)
    residual = bound
    if tail == "free":
        tl = free_tail(asymptotic, nl, cfg.T, 1, tail_nodes)
        out = out - 1j * tl.samples
        asymptotic = Field(grid, asymptotic.samples - 1j * tl.samples)
        tail_size = tl.norm()
        drift = (asymptotic - u0).norm() / max(u0.norm(), 1e-300)
        residual = tail_size * drift
    result = Field(grid, out)
    diff = math.sqrt(grid.cell_area * np.sum(np.abs(out - asymptotic.samples) ** 2))
    result.meta.update(
        T=cfg.T, dt=cfg.dt, tail=tail,
        tail_bound=bound, tail_decay_exponent=alpha, tail_residual=residual,
        duhamel_vs_asymptotic=diff,
        boundary_mass=uT.boundary_mass_fraction(),
    )
    result.meta["valid"] = result.meta["boundary_mass"] < cfg.boundary_tol
    if tail_tol is not None and residual > tail_tol:
        logger.warning("wave operator tail estimate %.3e exceeds tolerance %.3e", residual, tail_tol)
    return result


def scattering_map(cfg: EvolutionConfig, u_minus: Field, tail: str = "free", tail_nodes: int = 12) -> Field:
    """S_F(u_-) ~ e^{-iT Lap} u(T) for the solution with u(-T) = e^{-iT Lap} u_-.

    With ``tail='free'`` the incoming state at -T includes the free-flow
    correction from (-inf, -T] and the outgoing one the correction from
    [T, inf).
    """
    if tail not in ("free", "none"):
        raise ValueError("tail must be 'free' or 'none'")
    T = cfg.T
    start = u_minus
    if tail == "free":
        past = free_tail(u_minus, cfg.nl, T, -1, tail_nodes)
        start = Field(u_minus.grid, u_minus.samples - 1j * past.samples)
    uT = splitstep_evolve(cfg, free_propagate(start, -T), -T, T)
    plus = free_propagate(uT, -T)
    if tail == "free":
        fut = free_tail(plus, cfg.nl, T, 1, tail_nodes)
        plus = Field(plus.grid, plus.samples - 1j * fut.samples)
    plus.meta.update(T=T, dt=cfg.dt, tail=tail, boundary_mass=uT.meta["boundary_mass"],
                     valid=uT.meta["valid"])
    return plus


def spacetime_norm(times, spatial_norms, q: float) -> float:
    """(int ||u(t)||^q dt)^{1/q} by the trapezoid rule."""
    times = np.asarray(times, dtype=float)
    vals = np.asarray(spatial_norms, dtype=float) ** q
    return float(np.trapezoid(vals, times) ** (1.0 / q))


def strichartz_norms(traj: Trajectory, grid: Grid2D, p: float = 2.0) -> dict:
    """L^3_t L^6_x and L^{3p/2}_t L^{3p}_x norms of a captured trajectory."""
    r_pairs = {"L3L6": (3.0, 6.0), "Lp": (1.5 * p, 3.0 * p)}
    out = {}
    for name, (q, r) in r_pairs.items():
        if r in traj.lp:
            sp = traj.lp[r]
            times = traj.times
        else:
            if not traj.fields or len(traj.fields) != len(traj.times):
                raise ValueError(f"trajectory lacks fields or recorded L^{r:g} norms")
            sp = np.array([(grid.cell_area * np.sum(np.abs(u) ** r)) ** (1.0 / r) for u in traj.fields])
            times = traj.times
        out[name] = spacetime_norm(times, sp, q)
    out["p"] = p
    return out


@dataclass
class PicardResult:
    iterates: list
    distances: np.ndarray
    ratios: np.ndarray
    times: np.ndarray
    contracting: bool


def _l3l6(diff_frames, times, area):
    sp = np.array([(area * np.sum(np.abs(d) ** 6)) ** (1.0 / 6.0) for d in diff_frames])
    return spacetime_norm(times, sp, 3.0)


def picard_iterate(cfg: EvolutionConfig, u0: Field, n_iter: int = 6, raise_on_failure: bool = True) -> PicardResult:
    """Iterate u -> e^{it Lap} u0 - i int_0^t e^{i(t-s) Lap} F(u(s)) ds on [0, T].

    Starts from the free evolution; the time integral is the cumulative
    trapezoid rule on a uniform grid of step ``cfg.dt``.  Distances between
    successive iterates are measured in L^3_t L^6_x.
    """
    grid = u0.grid
    n = max(1, int(math.ceil(cfg.T / cfg.dt - 1e-9)))
    times = np.linspace(0.0, cfg.T, n + 1)
    k2 = grid.k2
    u0hat = _fft(u0.samples)
    current = [_ifft(u0hat * np.exp(-1j * t * k2)) for t in times]
    iterates = [Field(grid, current[-1])]
    distances = []
    bad = 0
    ratios = []
    for it in range(n_iter):
        new = []
        acc = np.zeros_like(u0hat)
        prev = None
        for t, u in zip(times, current):
            Fhat = _fft(cfg.nl.bulk_h(np.abs(u) ** 2) * u) * np.exp(1j * t * k2)
            if prev is not None:
                acc = acc + 0.5 * (t - prev[0]) * (Fhat + prev[1])
            prev = (t, Fhat)
            new.append(_ifft((u0hat - 1j * acc) * np.exp(-1j * t * k2)))
        d = _l3l6([a - b for a, b in zip(new, current)], times, grid.cell_area)
        distances.append(d)
        current = new
        iterates.append(Field(grid, current[-1]))
        if len(distances) >= 2 and distances[-2] > 0:
            r = distances[-1] / distances[-2]
            ratios.append(r)
            bad = bad + 1 if r >= 1.0 else 0
            if bad >= 2:
                if raise_on_failure:
                    raise SimulationGuardError(
                        "Picard iteration is not contracting (two consecutive ratios >= 1)",
                        {"distances": distances},
                    )
                break
        if distances[-1] == 0.0:
            break
    return PicardResult(iterates, np.array(distances), np.array(ratios), times, bad < 2)
