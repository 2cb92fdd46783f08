"""Closed-form convergence upper bounds for SFL and PFL, and their tuned rates.

Every bound is the sum of named additive terms; ``bound_terms`` exposes them so
callers can inspect the regime (``dominant_term``) rather than just the total.

``sfl_bound`` / ``pfl_bound`` return the explicit-constant upper bounds valid
for a given effective learning rate. ``tuned_rate`` returns the
order-level rate after tuning, with absolute constants set to one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .objectives import ConfigurationError, HeterogeneityReport

_SLACK = 1e-12


class BoundDomainError(ConfigurationError):
    """Parameters fall outside the region where a bound is proven."""


class Case(str, enum.Enum):
    STRONGLY_CONVEX = "strongly_convex"
    GENERAL_CONVEX = "general_convex"
    NON_CONVEX = "non_convex"


class Participation(str, enum.Enum):
    FULL = "full"
    PARTIAL = "partial"


def _case(case) -> Case:
    if isinstance(case, str):
        case = case.replace("-", "_")
    return Case(case)


def _algo(algo) -> str:
    a = getattr(algo, "value", algo).lower()
    if a not in ("sfl", "pfl"):
        raise ConfigurationError(f"bounds exist for 'sfl' and 'pfl', not {algo!r}")
    return a


@dataclass(frozen=True)
class BoundParams:
    mu: float = 0.0
    L: float = 1.0
    sigma: float = 0.0
    zeta_star_sq: float = 0.0
    beta_sq: float = 0.0
    zeta_sq: float = 0.0
    M: int = 1
    S: int | None = None
    K: int = 1
    R: int = 1
    eta_tilde: float = 0.0
    D: float = 0.0
    A: float = 0.0
    clients_convex: bool = True

    def __post_init__(self):
        if self.S is None:
            object.__setattr__(self, "S", self.M)
        for name in ("mu", "sigma", "zeta_star_sq", "beta_sq", "zeta_sq", "D", "A"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise BoundDomainError(f"{name} must be finite and >= 0, got {v}")
        if not self.L > 0:
            raise BoundDomainError("L must be positive")
        if self.mu > self.L * (1 + _SLACK):
            raise BoundDomainError(f"mu={self.mu} exceeds L={self.L}")
        if not (self.M >= 1 and 1 <= self.S <= self.M and self.K >= 1 and self.R >= 1):
            raise BoundDomainError("need M >= 1, 1 <= S <= M, K >= 1, R >= 1")

    @classmethod
    def from_report(cls, report: HeterogeneityReport, **kw) -> BoundParams:
        base = dict(mu=report.mu, L=report.L, zeta_star_sq=report.zeta_star_sq,
                    beta_sq=report.beta_sq_fit, zeta_sq=report.zeta_sq_fit,
                    clients_convex=report.all_clients_convex)
        base.update(kw)
        return cls(**base)

    def with_(self, **changes) -> BoundParams:
        return replace(self, **changes)

    @property
    def beta(self) -> float:
        return math.sqrt(self.beta_sq)

    def eta_max(self, case) -> float:
        if _case(case) is Case.NON_CONVEX:
            return 1.0 / (6.0 * self.L * (self.beta + 1.0))
        return 1.0 / (6.0 * self.L)


def check_domain(p: BoundParams, case) -> None:
    case = _case(case)
    if not p.eta_tilde > 0:
        raise BoundDomainError("eta_tilde must be positive")
    if p.eta_tilde > p.eta_max(case) * (1 + _SLACK):
        raise BoundDomainError(f"eta_tilde={p.eta_tilde} exceeds the limit {p.eta_max(case)} for {case.value}")
    if case is not Case.NON_CONVEX and not p.clients_convex:
        raise BoundDomainError("convex-case bounds need every client objective convex")
    if case is Case.STRONGLY_CONVEX:
        if not p.mu > 0:
            raise BoundDomainError("strongly convex bound needs mu > 0")
        if p.eta_tilde * p.mu * p.R < 1 - _SLACK:
            raise BoundDomainError("strongly convex bound needs eta_tilde >= 1/(mu R)")


def _sampling_factor(M, S) -> float:
    # (M - S) / (S (M - 1)), zero at full participation
    return 0.0 if S == M else (M - S) / (S * (M - 1))


def bound_terms(p: BoundParams, algo, case, participation="full", check=True) -> dict[str, float]:
    """Additive terms of the explicit bound, keyed by role.

    Keys: ``optimization``, ``noise``, ``sampling``, ``noise_drift`` and
    ``heterogeneity_drift``. Full participation evaluates with ``S = M``.
    """
    algo, case = _algo(algo), _case(case)
    if check:
        check_domain(p, case)
    M, K, R, L, e = p.M, p.K, p.R, p.L, p.eta_tilde
    S = p.S if Participation(participation) is Participation.PARTIAL else M
    s2 = p.sigma ** 2
    sfl = algo == "sfl"

    if case is Case.NON_CONVEX:
        z2 = p.zeta_sq
        return {
            "optimization": 3 * p.A / (e * R),
            "noise": 3 * L * e * s2 / (S * K),
            "sampling": 0.0,
            "noise_drift": 27 * L**2 * e**2 * s2 / (8 * (S * K if sfl else K)),
            "heterogeneity_drift": (27 * L**2 * e**2 * z2 / (8 * S)) if sfl else 2.25 * L**2 * e**2 * z2,
        }

    z2 = p.zeta_star_sq
    if case is Case.STRONGLY_CONVEX:
        opt = 4.5 * p.mu * p.D**2 * math.exp(-p.mu * e * R / 2)
    else:
        opt = 3 * p.D**2 / (e * R)
    return {
        "optimization": opt,
        "noise": 12 * e * s2 / (S * K),
        "sampling": 12 * e * _sampling_factor(M, S) * z2,
        "noise_drift": 18 * L * e**2 * s2 / (S * K if sfl else K),
        "heterogeneity_drift": (18 * L * e**2 * z2 / S) if sfl else 12 * L * e**2 * z2,
    }


def sfl_bound(p: BoundParams, case, participation="full", check=True) -> float:
    return math.fsum(bound_terms(p, "sfl", case, participation, check).values())


def pfl_bound(p: BoundParams, case, participation="full", check=True) -> float:
    return math.fsum(bound_terms(p, "pfl", case, participation, check).values())


def bound(p: BoundParams, algo, case, participation="full", check=True) -> float:
    return math.fsum(bound_terms(p, algo, case, participation, check).values())


# -- tuned, order-level rates -------------------------------------------------

def polylog_factor(p: BoundParams) -> float:
    """``ln(max(2, mu^2 D^2 R / c))`` with ``c = sigma^2/(SK) + (M-S) zeta*^2/(S(M-1))``."""
    c = p.sigma**2 / (p.S * p.K) + _sampling_factor(p.M, p.S) * p.zeta_star_sq
    if c == 0 or p.mu == 0:
        return 1.0
    return math.log(max(2.0, p.mu**2 * p.D**2 * p.R / c))


def tuned_rate_terms(p: BoundParams, algo, case, participation="full", polylog=False) -> dict[str, float]:
    """Order-level tuned rate, absolute constants suppressed."""
    algo, case = _algo(algo), _case(case)
    M, K, R, L = p.M, p.K, p.R, p.L
    S = p.S if Participation(participation) is Participation.PARTIAL else M
    s2 = p.sigma**2
    sfl = algo == "sfl"
    samp = _sampling_factor(M, S)

    if case is Case.STRONGLY_CONVEX:
        if not p.mu > 0:
            raise BoundDomainError("strongly convex rate needs mu > 0")
        mu, z2 = p.mu, p.zeta_star_sq
        ell = polylog_factor(p.with_(S=S)) if polylog else 1.0
        return {
            "optimization": mu * p.D**2 * math.exp(-mu * R / (12 * L)),
            "noise": ell * s2 / (mu * S * K * R),
            "sampling": ell * samp * z2 / (mu * R),
            "noise_drift": ell * L * s2 / (mu**2 * (S * K if sfl else K) * R**2),
            "heterogeneity_drift": ell * L * z2 / (mu**2 * (S if sfl else 1) * R**2),
        }

    if case is Case.GENERAL_CONVEX:
        D, z2 = p.D, p.zeta_star_sq
        return {
            "optimization": L * D**2 / R,
            "noise": p.sigma * D / math.sqrt(S * K * R),
            "sampling": math.sqrt(samp * z2) * D / math.sqrt(R),
            "noise_drift": (L * s2 * D**4) ** (1 / 3) / ((S * K if sfl else K) ** (1 / 3) * R ** (2 / 3)),
            "heterogeneity_drift": (L * z2 * D**4) ** (1 / 3) / ((S if sfl else 1) ** (1 / 3) * R ** (2 / 3)),
        }

    A, z2 = p.A, p.zeta_sq
    return {
        "optimization": L * p.beta * A / R,
        "noise": math.sqrt(L * s2 * A) / math.sqrt(S * K * R),
        "sampling": 0.0,
        "noise_drift": (L**2 * s2 * A**2) ** (1 / 3) / ((S * K if sfl else K) ** (1 / 3) * R ** (2 / 3)),
        "heterogeneity_drift": (L**2 * z2 * A**2) ** (1 / 3) / ((S if sfl else 1) ** (1 / 3) * R ** (2 / 3)),
    }


def tuned_rate(p: BoundParams, algo, case, participation="full", polylog=False) -> float:
    """Tuned rate, order-level with constants suppressed (not an absolute bound)."""
    return math.fsum(tuned_rate_terms(p, algo, case, participation, polylog).values())


def tuned_eta_tilde(p: BoundParams, algo, case, participation="full") -> float:
    """Effective learning rate picked by the tuning rules for horizon ``R``."""
    algo, case = _algo(algo), _case(case)
    M, K, R, L = p.M, p.K, p.R, p.L
    S = p.S if Participation(participation) is Participation.PARTIAL else M
    s2 = p.sigma**2
    sfl = algo == "sfl"
    cap = p.eta_max(case)

    if case is Case.NON_CONVEX:
        r0 = p.A
        c1 = L * s2 / (S * K)
        c2 = 9 * L**2 * s2 / (8 * (S * K if sfl else K)) + (
            9 * L**2 * p.zeta_sq / (8 * S) if sfl else 0.75 * L**2 * p.zeta_sq)
    else:
        r0 = p.D**2
        z2 = p.zeta_star_sq
        c1 = 4 * s2 / (S * K) + 4 * _sampling_factor(M, S) * z2
        c2 = 6 * L * s2 / (S * K if sfl else K) + (6 * L * z2 / S if sfl else 4 * L * z2)

    if case is Case.STRONGLY_CONVEX:
        if not p.mu > 0:
            raise BoundDomainError("strongly convex tuning needs mu > 0")
        a = p.mu / 2
        if c1 == 0:
            return cap
        gamma = math.log(max(2.0, a**2 * r0 * R / c1)) / (a * R)
        return gamma if gamma < cap else cap

    cands = [cap]
    if c1 > 0:
        cands.append(math.sqrt(r0 / (c1 * (R + 1))))
    if c2 > 0:
        cands.append((r0 / (c2 * (R + 1))) ** (1 / 3))
    return min(cands)


def k_saturation(p: BoundParams, algo) -> float:
    """Local-step count where the strongly convex noise term meets the drift term.

    Beyond it, extra local steps no longer improve the order-level rate.
    """
    if not (p.mu > 0 and p.zeta_star_sq > 0):
        return math.inf
    base = p.sigma**2 * p.mu * p.R / (p.zeta_star_sq * p.L)
    return base if _algo(algo) == "sfl" else base / p.M


def dominant_term(p: BoundParams, algo, case, participation="full", kind="bound", check=True):
    """Name and share of the largest additive term."""
    if kind == "rate":
        terms = tuned_rate_terms(p, algo, case, participation)
    else:
        terms = bound_terms(p, algo, case, participation, check)
    total = math.fsum(terms.values())
    if total == 0:
        return "optimization", 1.0
    name = max(terms, key=lambda k: terms[k])
    return name, terms[name] / total
