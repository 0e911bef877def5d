"""Independent reference computations used by the tests.

Nothing here imports the package internals that it is meant to check: the
K-functional is minimized in a rotated dense basis, interpolation norms are integrated
with adaptive quadrature, feasibility is decided by exhaustive search over
an exact rational lattice, and scalar solutions come from closed forms.
"""

from __future__ import annotations

import math
from fractions import Fraction
from math import lcm

import numpy as np
from scipy import integrate


# ---------------------------------------------------------------------------
# interpolation


def _rotated_power(eigenvalues, upper, seed=0):
    """Dense ``A^upper`` for ``A = Q diag(lam) Q^T`` with a random orthogonal ``Q``."""
    lam = np.asarray(eigenvalues, dtype=float)
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((lam.size, lam.size)))
    return q @ np.diag(lam**upper) @ q.T, q


def brute_k_functional(t, x, eigenvalues, upper=1.0):
    """``inf_{x = a + b} (|a|^2 + t^2 |A^upper b|^2)^(1/2)``.

    The minimization is done in a rotated basis where the generator is a
    dense matrix: the minimizer has ``b = (I + t^2 M^2)^{-1} x`` and
    ``a = t^2 M^2 b``; both are formed directly to avoid cancellation.
    """
    M, q = _rotated_power(eigenvalues, upper)
    xr = q @ np.asarray(x, dtype=float)
    M2 = M @ M
    b = np.linalg.solve(np.eye(len(xr)) + t**2 * M2, xr)
    a = t**2 * (M2 @ b)
    return math.sqrt(float(a @ a + t**2 * (M @ b) @ (M @ b)))


def brute_interp_norm(x, theta, q, eigenvalues, upper=1.0):
    """``(int_0^inf (t^-theta K(t, x))^q dt/t)^(1/q)`` with ``K`` from :func:`brute_k_functional`.

    Substituting ``t = e^s`` and splitting at each eigenvalue scale keeps the
    adaptive quadrature accurate.
    """
    mu = np.asarray(eigenvalues, dtype=float) ** upper
    marks = sorted(set(np.log(1.0 / mu).tolist()))

    def integrand(s):
        t = math.exp(s)
        return (t**-theta * brute_k_functional(t, x, eigenvalues, upper)) ** q

    # the integrand decays like e^{q(1-theta)s} below and e^{-q theta s} above the marks
    lo, hi = marks[0] - 40.0 / (q * (1 - theta)), marks[-1] + 40.0 / (q * theta)
    pts = sorted(set(np.arange(lo, marks[0], 1.0).tolist() + marks + np.arange(hi, marks[-1], -1.0).tolist()))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            val, _ = integrate.quad(integrand, a, b, limit=200, epsabs=1e-15, epsrel=1e-9)
            total += val
    return total ** (1.0 / q)


def eigen_interp_constant(theta, q):
    """``||e||`` in ``(X_0, X_1)_{theta,q}`` for a unit eigenvector with eigenvalue 1."""
    val, _ = integrate.quad(lambda t: t ** (-theta * q - 1) * (t**2 / (1 + t**2)) ** (q / 2), 0, np.inf,
                            limit=400)
    return val ** (1.0 / q)


# ---------------------------------------------------------------------------
# admissibility


def _den(x: Fraction) -> int:
    return x.denominator


def lattice_feasible(p, kappa, r, nu, gamma):
    """Exhaustive search for ``(s, s_hat, r_hat, nu_hat)`` on an exact rational lattice.

    With ``a = 1/r_hat`` and ``y = nu_hat/r_hat`` every constraint is linear
    with endpoints whose denominators divide ``D``; if the system has a
    solution it has one with ``a, y`` on the ``1/(2D)`` lattice, so scanning
    that lattice in integer units decides feasibility exactly.  ``s`` is taken
    at its upper bound.  Returns the witness or ``None``.
    """
    p, kappa, r, nu, gamma = map(Fraction, (p, kappa, r, nu, gamma))
    bounds = (1 / p, 1 / r, kappa / p, nu / r, (1 + kappa) / p, (1 + nu) / r, gamma)
    D = 1
    for v in bounds:
        D = lcm(D, v.denominator)
    N = 2 * D
    a_lo, a_hi, y_lo, y_hi, x_lo, x_hi, g = (int(v * N) for v in bounds)
    if a_lo > a_hi or y_lo > y_hi:
        return None
    for k in range(a_lo, a_hi + 1):
        for j in range(max(y_lo, x_lo - k + 1), min(y_hi, x_hi - k - 1) + 1):
            x = k + j
            s = x - x_hi
            if s >= -g + x - x_lo:
                n = Fraction(1, N)
                return (s * n, (s + g) * n, Fraction(N, k), Fraction(j, k))
            break  # the s clause does not depend on the lattice point
    return None


def random_rational(rng, low, high, max_den=24):
    """Uniformly drawn rational in ``[low, high]`` with denominator at most ``max_den``."""
    den = int(rng.integers(1, max_den + 1))
    lo = math.ceil(low * den)
    hi = math.floor(high * den)
    if hi < lo:
        return Fraction(lo, den)
    return Fraction(int(rng.integers(lo, hi + 1)), den)


# ---------------------------------------------------------------------------
# closed forms


def power_norm(c, alpha, q, mu, a, b):
    """``(int_a^b t^mu (c t^-alpha)^q dt)^(1/q)`` by adaptive quadrature.

    From 0 the singular power is an algebraic quadrature weight; otherwise
    the integral is taken in ``s = log t`` where the integrand is smooth.
    """
    e = mu - alpha * q
    if a == 0.0 and e <= -1.0:
        return math.inf
    if a == 0.0:
        val, _ = integrate.quad(lambda t: 1.0, 0.0, b, weight="alg", wvar=(e, 0.0))
    else:
        val, _ = integrate.quad(lambda s: math.exp((e + 1) * s), math.log(a), math.log(b), epsabs=0, epsrel=1e-12)
    return (abs(c) ** q * val) ** (1.0 / q)


def scalar_decay(t):
    return np.exp(-t)


def scalar_growth(t):
    return 1.0 - np.exp(-t)


def scalar_singular(t):
    """Solution of ``u' + u + t^(-1/4) u = 0``, ``u(0) = 1``."""
    return np.exp(-t - (4.0 / 3.0) * t**0.75)


def scalar_double(t):
    """Solution of ``u' + u + u = 0``, ``u(0) = 1``."""
    return np.exp(-2.0 * t)


def weighted_lp_scalar(fun, p, kappa, a, b, points=None):
    """``(int_a^b t^kappa |fun(t)|^p dt)^(1/p)`` by adaptive quadrature."""
    val, _ = integrate.quad(lambda t: t**kappa * abs(fun(t)) ** p, a, b, limit=400, points=points)
    return val ** (1.0 / p)
