"""Exact rational parameter calculus for mixed-scale perturbations.

All comparisons use :class:`fractions.Fraction`; the admissible region has
closed and open boundary pieces that float comparisons would misclassify.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

from ._validation import EnvelopeClassError, ParameterError

__all__ = [
    "Verdict",
    "AdmissibleTriple",
    "P_EQUALS_R",
    "as_fraction",
    "is_admissible",
    "holder_exponents",
    "generalized_b_params",
    "FeasibilityWitness",
    "Infeasible",
    "embedding_feasibility",
    "embedding_criterion",
    "check_witness",
    "envelope_class_check",
]

CLAUSE_GAMMA = "γ ∈ (0,1)∩(0,γ*]"
CLAUSE_NU = "ν ≥ 0"
CLAUSE_R_LOW = "ν+1 < r"
CLAUSE_R_HIGH = "r ≤ p"
CLAUSE_WEIGHT = "κ/p ≤ ν/r"
CLAUSE_LEFT = "(1+κ)/p < (1+ν)/r"
CLAUSE_RIGHT = "(1+ν)/r ≤ (1+κ)/p + γ"


class _Sentinel:
    """Marker returned when ``p == r``: the envelope must vanish."""

    def __repr__(self):
        return "P_EQUALS_R"

    def __reduce__(self):
        return "P_EQUALS_R"


P_EQUALS_R = _Sentinel()


def as_fraction(x) -> Fraction:
    """Exact rational from int/Fraction/str; floats via their shortest decimal."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class Verdict:
    admissible: bool
    failed: tuple = ()

    @property
    def reason(self) -> str:
        return "admissible" if self.admissible else "failed: " + "; ".join(self.failed)

    def __bool__(self):
        return self.admissible


def is_admissible(p, kappa, gamma_star, r, nu, gamma) -> Verdict:
    """``(p, kappa)``-admissibility of the triple ``(r, nu, gamma)`` with named failed clauses."""
    p, kappa, gs, r, nu, gamma = map(as_fraction, (p, kappa, gamma_star, r, nu, gamma))
    failed = []
    if not (0 < gamma < 1 and gamma <= gs):
        failed.append(CLAUSE_GAMMA)
    if not nu >= 0:
        failed.append(CLAUSE_NU)
    if not nu + 1 < r:
        failed.append(CLAUSE_R_LOW)
    if not r <= p:
        failed.append(CLAUSE_R_HIGH)
    if not kappa / p <= nu / r:
        failed.append(CLAUSE_WEIGHT)
    left = (1 + kappa) / p
    mid = (1 + nu) / r
    if not left < mid:
        failed.append(CLAUSE_LEFT)
    if not mid <= left + gamma:
        failed.append(CLAUSE_RIGHT)
    return Verdict(not failed, tuple(failed))


def holder_exponents(p, kappa, r, nu):
    """Envelope exponent and weight ``(pr/(p-r), (nu p - kappa r)/(p-r))``.

    Returns :data:`P_EQUALS_R` when ``p == r`` (the envelope must be zero).
    """
    p, kappa, r, nu = map(as_fraction, (p, kappa, r, nu))
    if r > p:
        raise ParameterError(f"r = {r} exceeds p = {p}")
    if r == p:
        return P_EQUALS_R
    return (p * r / (p - r), (nu * p - kappa * r) / (p - r))


def generalized_b_params(p, kappa, r, nu, beta):
    """``(theta, q, mu)`` for perturbations defined on ``X_beta`` instead of ``X_1``."""
    p, kappa, r, nu, beta = map(as_fraction, (p, kappa, r, nu, beta))
    lo = 1 - (1 + kappa) / p
    if not lo <= beta <= 1:
        raise ParameterError(f"beta = {beta} outside [{lo}, 1]")
    theta = 1 - (1 - beta) * p / (1 + kappa)
    denom = p - r * theta
    if denom == 0:
        return (theta, P_EQUALS_R, P_EQUALS_R)
    return (theta, p * r / denom, (nu * p - kappa * r * theta) / denom)


@dataclass(frozen=True)
class AdmissibleTriple:
    """Triple ``(r, nu, gamma)`` with its verdict and envelope exponents for given ``(p, kappa)``."""

    r: Fraction
    nu: Fraction
    gamma: Fraction
    p: Fraction
    kappa: Fraction = Fraction(0)
    gamma_star: Fraction = Fraction(1)
    beta: Fraction = Fraction(1)
    verdict: Verdict = field(init=False)
    q_b: object = field(init=False)
    mu_b: object = field(init=False)
    theta: Fraction = field(init=False)

    def __post_init__(self):
        for name in ("r", "nu", "gamma", "p", "kappa", "gamma_star", "beta"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        verdict = is_admissible(self.p, self.kappa, self.gamma_star, self.r, self.nu, self.gamma)
        object.__setattr__(self, "verdict", verdict)
        if self.r <= self.p:
            theta, q, mu = generalized_b_params(self.p, self.kappa, self.r, self.nu, self.beta)
        else:
            theta, q, mu = Fraction(1), None, None
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "q_b", q)
        object.__setattr__(self, "mu_b", mu)
        if verdict.admissible and q is not P_EQUALS_R and self.beta == 1:
            assert mu >= 0, "admissible triples have nonnegative envelope weight"

    @property
    def admissible(self) -> bool:
        return self.verdict.admissible

    def as_floats(self):
        return float(self.r), float(self.nu), float(self.gamma)


# ---------------------------------------------------------------------------
# embedding feasibility


class FeasibilityWitness(NamedTuple):
    s: Fraction
    s_hat: Fraction
    r_hat: Fraction
    nu_hat: Fraction


@dataclass(frozen=True)
class Infeasible:
    """Certificate: the closed-form criterion clauses that fail."""

    failed: tuple

    def __bool__(self):
        return False


def embedding_criterion(p, kappa, r, nu, gamma) -> tuple:
    """Failed clauses of ``p >= r, kappa/p <= nu/r, (1+kappa)/p < (1+nu)/r <= gamma + (1+kappa)/p``."""
    p, kappa, r, nu, gamma = map(as_fraction, (p, kappa, r, nu, gamma))
    failed = []
    if not p >= r:
        failed.append("p ≥ r")
    if not kappa / p <= nu / r:
        failed.append(CLAUSE_WEIGHT)
    if not (1 + kappa) / p < (1 + nu) / r:
        failed.append(CLAUSE_LEFT)
    if not (1 + nu) / r <= gamma + (1 + kappa) / p:
        failed.append(CLAUSE_RIGHT)
    return tuple(failed)


def check_witness(p, kappa, r, nu, gamma, w: FeasibilityWitness) -> tuple:
    """Names of the intermediate-parameter constraints violated by ``w`` (empty if valid)."""
    p, kappa, r, nu, gamma = map(as_fraction, (p, kappa, r, nu, gamma))
    s, s_hat, r_hat, nu_hat = w
    bad = []
    if not (p >= r_hat >= r):
        bad.append("p ≥ r̂ ≥ r")
    if not (kappa / p <= nu_hat / r_hat <= nu / r):
        bad.append("κ/p ≤ ν̂/r̂ ≤ ν/r")
    if not ((1 + kappa) / p < (1 + nu_hat) / r_hat < (1 + nu) / r):
        bad.append("(1+κ)/p < (1+ν̂)/r̂ < (1+ν)/r")
    if not s <= (1 + nu_hat) / r_hat - (1 + nu) / r:
        bad.append("s upper")
    if not s >= -gamma + (1 + nu_hat) / r_hat - (1 + kappa) / p:
        bad.append("s lower")
    if s_hat != s + gamma:
        bad.append("ŝ = s+γ")
    return tuple(bad)


def embedding_feasibility(p, kappa, r, nu, gamma):
    """Deterministic witness for the intermediate-parameter system, or a certificate.

    The witness puts ``(1+nu_hat)/r_hat`` at the midpoint of
    ``((1+kappa)/p, (1+nu)/r)``, takes the smallest allowed ``nu_hat/r_hat``
    and puts ``s`` at its upper bound.  The candidate is then verified
    clause by clause; on failure the closed-form criterion names the reason.
    """
    p, kappa, r, nu, gamma = map(as_fraction, (p, kappa, r, nu, gamma))
    lo = (1 + kappa) / p
    hi = (1 + nu) / r
    mid = (lo + hi) / 2
    slope = max(kappa / p, mid - 1 / r)
    inv_r = mid - slope
    certificate = Infeasible(embedding_criterion(p, kappa, r, nu, gamma) or ("constructed witness invalid",))
    if inv_r <= 0:
        return certificate
    r_hat = 1 / inv_r
    nu_hat = slope * r_hat
    s = mid - hi
    w = FeasibilityWitness(s, s + gamma, r_hat, nu_hat)
    if check_witness(p, kappa, r, nu, gamma, w):
        return certificate
    return w


# ---------------------------------------------------------------------------
# envelope integrability class


def envelope_class_check(envelope, q_b, mu_b, T) -> bool:
    """Raise unless ``envelope`` has finite ``L^{q_b}(0, T; w_{mu_b})`` norm."""
    if q_b is P_EQUALS_R:
        if not envelope.is_zero():
            raise EnvelopeClassError("p = r requires a zero envelope")
        return True
    q_b = float(q_b)
    mu_b = float(mu_b)
    if envelope.is_zero():
        return True
    if not envelope.in_class(q_b, mu_b, float(T)):
        raise EnvelopeClassError(
            f"envelope {envelope.to_config()} is not in L^{q_b:g}(0, {T}; t^{mu_b:g}); supercritical"
        )
    return True
