"""The superlevel weight w(k), its Laplace transform W(z) and a Gamma function.

``w`` is the profile

    w(k) = s^3 + 6 s - 6 atan(s),   s = (e^k - 1)^{1/2},   k > 0,

and zero for k <= 0.  Its Laplace transform has the closed form

    W(z) = 9 sqrt(pi) Gamma(z + 1/2) / Gamma(z + 1) * (z - 1) / (z (2z - 1)(2z - 3)),

which is evaluated through :func:`log_gamma`.  :func:`weight_laplace_quadrature`
integrates the defining integral directly and is kept independent of the
closed form so the two can check each other.
"""

import math
import warnings

import numpy as np
from scipy import integrate

from .errors import DomainError

__all__ = [
    "log_gamma",
    "gamma",
    "weight_w",
    "weight_w_prime",
    "weight_laplace_W",
    "weight_laplace_quadrature",
    "gamma_ratio_bound_check",
    "two_sided_bound_constants",
]

# Stirling series coefficients B_{2k} / (2k (2k - 1)).
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
_SHIFT_TO = 15.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# below this k the closed form of w loses digits to cancellation
W_SERIES_CROSSOVER = 1e-3


def _is_gamma_pole(z):
    z = np.asarray(z, dtype=complex)
    re = z.real
    return (z.imag == 0.0) & (re <= 0.0) & (re == np.round(re))


def log_gamma(z):
    """Principal-branch log Gamma for complex ``z`` (scalar or array).

    Shifts ``z`` up with the recurrence until Re z >= 15, then applies the
    Stirling series.  The branch is the sum of principal logarithms, i.e. the
    one continuous off the negative real axis.
    """
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(_is_gamma_pole(z)):
        bad = z[_is_gamma_pole(z)][0]
        raise DomainError(f"Gamma has a pole at z = {bad.real:g}")

    shifts = np.maximum(np.ceil(_SHIFT_TO - z.real), 0).astype(int)
    correction = np.zeros_like(z)
    zz = z.copy()
    for _ in range(int(shifts.max(initial=0))):
        active = shifts > 0
        correction[active] += np.log(zz[active])
        zz[active] += 1.0
        shifts[active] -= 1

    inv = 1.0 / zz
    inv2 = inv * inv
    series = np.zeros_like(zz)
    power = inv
    for c in _STIRLING:
        series += c * power
        power = power * inv2
    out = (zz - 0.5) * np.log(zz) - zz + _HALF_LOG_2PI + series - correction
    return out[0] if scalar else out


def gamma(z):
    """Complex Gamma function, ``exp(log_gamma(z))``."""
    return np.exp(log_gamma(z))


def _as_array(k):
    return np.ndim(k) == 0, np.atleast_1d(np.asarray(k, dtype=float))


def weight_w(k):
    """The weight w(k); vectorised over ``k``."""
    scalar, k = _as_array(k)
    out = np.zeros_like(k)
    pos = k > 0
    small = pos & (k < W_SERIES_CROSSOVER)
    large = pos & ~small

    s = np.sqrt(np.expm1(k[large]))
    out[large] = s**3 + 6.0 * s - 6.0 * np.arctan(s)

    # 3 s^3 - 6/5 s^5 + 6/7 s^7 - ... from the atan series
    s2 = np.expm1(k[small])
    s = np.sqrt(s2)
    acc = np.zeros_like(s)
    for j in range(5, 1, -1):
        acc = -((-1) ** j) * 6.0 / (2 * j + 1) + s2 * acc
    out[small] = s**3 * (3.0 + s2 * acc)
    return float(out[0]) if scalar else out


def weight_w_prime(k):
    """Derivative of w, s (3/2 e^k + 3) with s = (e^k - 1)^{1/2}."""
    scalar, k = _as_array(k)
    out = np.zeros_like(k)
    pos = k > 0
    s = np.sqrt(np.expm1(k[pos]))
    ek = np.exp(k[pos])
    # d/dk [s^3 + 6 s - 6 atan s] with ds/dk = e^k / (2 s)
    out[pos] = ek * s * (1.5 + 3.0 / ek)
    return float(out[0]) if scalar else out


def weight_laplace_W(z):
    """Closed-form Laplace transform W(z) of the weight, meromorphic in z."""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    for pole in (0.0, 0.5, 1.5):
        if np.any(z == pole):
            raise DomainError(f"W has a pole at z = {pole:g}")
    if np.any(_is_gamma_pole(z + 0.5)):
        raise DomainError("W has a pole where z + 1/2 is a pole of Gamma")
    if np.any(_is_gamma_pole(z + 1.0)):
        raise DomainError("z + 1 is a pole of Gamma; the Gamma ratio is undefined there")
    ratio = np.exp(log_gamma(z + 0.5) - log_gamma(z + 1.0))
    out = 9.0 * math.sqrt(math.pi) * ratio * (z - 1.0) / (z * (2.0 * z - 1.0) * (2.0 * z - 3.0))
    return complex(out[0]) if scalar else out


def _tail_asymptotic(z, K):
    # w(k) = e^{3k/2} + 4.5 e^{k/2} - 3 pi + 3.375 e^{-k/2} + O(e^{-3k/2})
    terms = ((1.0, 1.5), (4.5, 0.5), (-3.0 * math.pi, 0.0), (3.375, -0.5))
    return sum(c * np.exp(-(z - a) * K) / (z - a) for c, a in terms)


def weight_laplace_quadrature(z, tol=1e-10, margin=0.1):
    """Laplace transform of w by adaptive quadrature of the defining integral.

    Integrates on [0, K] with QUADPACK (oscillatory weight for Im z != 0) and
    adds the tail beyond K from the large-k expansion of w.  K is picked so the
    neglected O(e^{-3k/2}) part of the tail is far below ``tol``.
    """
    z = complex(z)
    a, b = z.real, z.imag
    if a <= 1.5 + margin:
        raise DomainError(
            f"Laplace integral of w diverges or converges too slowly for Re z = {a:g} "
            f"(need Re z > {1.5 + margin:g})"
        )
    # remainder after the asymptotic tail is below ~ e^{-(a + 3/2) K}
    K = max(8.0, math.log(1.0 / tol) / (a + 1.5) + 4.0)

    def f(k):
        return math.exp(-a * k) * weight_w(k)

    opts = dict(epsabs=0.0, epsrel=max(tol * 1e-2, 1e-14), limit=1000)
    with warnings.catch_warnings():
        # QUADPACK flags roundoff once it is at machine precision; harmless here
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if b == 0.0:
            re, _ = integrate.quad(f, 0.0, K, **opts)
            im = 0.0
        else:
            re, _ = integrate.quad(f, 0.0, K, weight="cos", wvar=b, **opts)
            im, _ = integrate.quad(f, 0.0, K, weight="sin", wvar=b, **opts)
            im = -im
    return complex(re, im) + complex(_tail_asymptotic(z, K))


def gamma_ratio_bound_check(z, rtol=1e-12):
    """True iff |z+1/2|^{-1/2} <= |Gamma(z+1/2)/Gamma(z+1)| <= |z+1|^{1/2}/|z+1/2|.

    These are the two Gamma-ratio bounds (valid for Re z > -1/4) behind the
    two-sided estimate |W(z)| ~ |z|^{-5/2}.
    """
    z = complex(z)
    ratio = abs(np.exp(log_gamma(z + 0.5) - log_gamma(z + 1.0)))
    lower = abs(z + 0.5) ** -0.5
    upper = abs(z + 1.0) ** 0.5 / abs(z + 0.5)
    return bool(lower * (1 - rtol) <= ratio <= upper * (1 + rtol))


def two_sided_bound_constants(re_z=1.75, xi_max=100.0, n=4001):
    """Fit c1, c2 with c1 |z|^{-5/2} <= |W(z)| <= c2 |z|^{-5/2} on a vertical line."""
    xi = np.linspace(-xi_max, xi_max, n)
    z = re_z + 1j * xi
    scaled = np.abs(weight_laplace_W(z)) * np.abs(z) ** 2.5
    return float(scaled.min()), float(scaled.max())
