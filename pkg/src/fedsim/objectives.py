"""Quadratic client objectives, the global objective and heterogeneity constants.

Every client holds ``F_m(x) = 0.5 x^T A_m x + b_m^T x + c_m``. The global
objective is the unweighted mean of the clients, so its curvature and linear
term are the means of the client coefficients.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for malformed objectives, configs or mismatched dimensions."""


class NoUniqueMinimizerError(ConfigurationError):
    """The global curvature is singular or indefinite."""


_SYM_RTOL = 1e-12


def param_vector(values, d: int | None = None) -> np.ndarray:
    """Validate ``values`` as a finite parameter point and return a float64 copy."""
    x = np.array(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ConfigurationError("parameter vector must have d >= 1")
    if d is not None and x.size != d:
        raise ConfigurationError(f"expected a vector of dimension {d}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("parameter vector has non-finite entries")
    return x


@dataclass(frozen=True)
class QuadraticClient:
    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=np.float64))
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if A.shape != (b.size, b.size):
            raise ConfigurationError(f"A has shape {A.shape} but b has dimension {b.size}")
        scale = max(1.0, float(np.max(np.abs(A))))
        if not np.allclose(A, A.T, rtol=0.0, atol=_SYM_RTOL * scale):
            raise ConfigurationError("curvature matrix A must be symmetric")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.isfinite(self.c)):
            raise ConfigurationError("client coefficients must be finite")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.b.size

    def value(self, x) -> float:
        x = param_vector(x, self.dim)
        return float(0.5 * x @ self.A @ x + self.b @ x + self.c)

    @property
    def is_convex(self) -> bool:
        return bool(np.linalg.eigvalsh(self.A)[0] >= -_SYM_RTOL)


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic additive Gaussian gradient noise with ``E||eps||^2 = sigma^2``."""

    sigma: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigurationError("noise sigma must be finite and >= 0")

    def coordinate_std(self, d: int) -> float:
        return self.sigma / np.sqrt(d)


@dataclass(frozen=True)
class FederationSpec:
    clients: tuple[QuadraticClient, ...]
    name: str = ""

    def __post_init__(self):
        clients = tuple(self.clients)
        if not clients:
            raise ConfigurationError("a federation needs at least one client")
        dims = {cl.dim for cl in clients}
        if len(dims) != 1:
            raise ConfigurationError(f"clients disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "clients", clients)

    @property
    def M(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.clients[0].dim

    @property
    def A_stack(self) -> np.ndarray:
        return np.ascontiguousarray(np.stack([cl.A for cl in self.clients]))

    @property
    def b_stack(self) -> np.ndarray:
        return np.ascontiguousarray(np.stack([cl.b for cl in self.clients]))

    @property
    def A_mean(self) -> np.ndarray:
        return self.A_stack.mean(axis=0)

    @property
    def b_mean(self) -> np.ndarray:
        return self.b_stack.mean(axis=0)

    @property
    def c_mean(self) -> float:
        return float(np.mean([cl.c for cl in self.clients]))

    def value(self, x) -> float:
        x = param_vector(x, self.dim)
        return float(0.5 * x @ self.A_mean @ x + self.b_mean @ x + self.c_mean)

    def global_grad(self, x) -> np.ndarray:
        x = param_vector(x, self.dim)
        return self.A_mean @ x + self.b_mean

    def to_dict(self) -> dict:
        return {
            "clients": [
                {"A": cl.A.tolist(), "b": cl.b.tolist(), "c": cl.c} for cl in self.clients
            ]
        }


def grad(client: QuadraticClient, x) -> np.ndarray:
    """Exact gradient ``A x + b``."""
    x = param_vector(x)
    if x.size != client.dim:
        raise ConfigurationError(f"x has dimension {x.size}, client expects {client.dim}")
    return client.A @ x + client.b


def stochastic_grad(client: QuadraticClient, x, noise: NoiseModel, rng: np.random.Generator):
    """Exact gradient plus one draw of isotropic Gaussian noise from ``rng``."""
    g = grad(client, x)
    if noise.sigma == 0:
        return g
    return g + rng.normal(0.0, noise.coordinate_std(g.size), size=g.size)


def global_minimizer(spec: FederationSpec) -> np.ndarray:
    """Solve ``mean(A) x = -mean(b)``; the global curvature must be positive definite."""
    A = spec.A_mean
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= _SYM_RTOL * max(1.0, abs(eig[-1])):
        raise NoUniqueMinimizerError(
            f"global curvature has smallest eigenvalue {eig[0]:.3g}; no unique minimizer"
        )
    return np.linalg.solve(A, -spec.b_mean)


def optimal_value(spec: FederationSpec) -> float:
    return spec.value(global_minimizer(spec))


@dataclass(frozen=True)
class HeterogeneityReport:
    zeta_star_sq: float
    delta: float
    zeta_sq_fit: float
    beta_sq_fit: float
    mu: float
    L: float
    x_star: np.ndarray = field(repr=False)
    nonconvex_clients: tuple[int, ...] = ()

    @property
    def zeta_star(self) -> float:
        return float(np.sqrt(self.zeta_star_sq))

    @property
    def all_clients_convex(self) -> bool:
        return not self.nonconvex_clients


def _dissimilarity(spec: FederationSpec, points: np.ndarray) -> np.ndarray:
    """``(1/M) sum_m ||grad F_m(x) - grad F(x)||^2`` at each row of ``points``."""
    dA = spec.A_stack - spec.A_mean
    db = spec.b_stack - spec.b_mean
    diff = np.einsum("mij,pj->pmi", dA, points) + db[None, :, :]
    return np.mean(np.sum(diff * diff, axis=2), axis=1)


def box_vertices(center, radius: float) -> np.ndarray:
    center = param_vector(center)
    if center.size > 16:
        raise ConfigurationError("box vertex enumeration is limited to d <= 16")
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=center.size)))
    return center + radius * corners


def fit_dissimilarity_pair(spec: FederationSpec, sample_points) -> tuple[float, float]:
    """Return ``(beta_sq, zeta_sq)`` with ``beta_sq = 0`` and the smallest certifying ``zeta_sq``.

    The dissimilarity is a convex quadratic in ``x``, so over a box the maximum
    sits at a vertex; pass :func:`box_vertices` to certify a whole box.
    """
    pts = np.atleast_2d(np.asarray(sample_points, dtype=np.float64))
    if pts.shape[0] == 0:
        raise ConfigurationError("sample_points must be nonempty")
    return 0.0, float(np.max(_dissimilarity(spec, pts)))


@dataclass(frozen=True)
class DissimilarityCheck:
    max_residual: float
    worst_point: np.ndarray

    @property
    def holds(self) -> bool:
        return self.max_residual <= 0.0


def check_dissimilarity_bound(spec: FederationSpec, beta_sq, zeta_sq, sample_points):
    """Largest ``lhs - (beta_sq ||grad F||^2 + zeta_sq)`` over ``sample_points``.

    A non-positive residual means the pair bounds the client gradient
    dissimilarity at every sampled point.
    """
    pts = np.atleast_2d(np.asarray(sample_points, dtype=np.float64))
    if pts.shape[0] == 0:
        raise ConfigurationError("sample_points must be nonempty")
    lhs = _dissimilarity(spec, pts)
    g = pts @ spec.A_mean.T + spec.b_mean
    rhs = beta_sq * np.sum(g * g, axis=1) + zeta_sq
    resid = lhs - rhs
    i = int(np.argmax(resid))
    return DissimilarityCheck(float(resid[i]), pts[i].copy())


def heterogeneity(spec: FederationSpec, fit_radius: float = 1.0) -> HeterogeneityReport:
    """Compute every heterogeneity constant the bounds consume.

    ``zeta_sq_fit`` is certified over the box of half-width ``fit_radius``
    around the global minimizer.
    """
    x_star = global_minimizer(spec)
    g_star = spec.A_stack @ x_star + spec.b_stack
    zeta_star_sq = float(np.mean(np.sum(g_star * g_star, axis=1)))

    A_bar = spec.A_mean
    delta = max(float(np.linalg.norm(cl.A - A_bar, ord=2)) for cl in spec.clients)
    mu = max(0.0, float(np.linalg.eigvalsh(A_bar)[0]))
    L = max(float(np.max(np.abs(np.linalg.eigvalsh(cl.A)))) for cl in spec.clients)
    if L <= 0:
        raise ConfigurationError("all client curvatures vanish; smoothness constant undefined")
    beta_sq, zeta_sq = fit_dissimilarity_pair(spec, box_vertices(x_star, fit_radius))
    bad = tuple(m for m, cl in enumerate(spec.clients) if not cl.is_convex)
    return HeterogeneityReport(
        zeta_star_sq=zeta_star_sq,
        delta=delta,
        zeta_sq_fit=zeta_sq,
        beta_sq_fit=beta_sq,
        mu=mu,
        L=L,
        x_star=x_star,
        nonconvex_clients=bad,
    )


# -- presets -----------------------------------------------------------------

def _scalar_spec(name: str, pairs: Iterable[tuple[Fraction | float, float]]) -> FederationSpec:
    # pairs hold (coefficient of x^2, coefficient of x); curvature is twice the first
    clients = [QuadraticClient([[2 * float(q)]], [float(lin)]) for q, lin in pairs]
    return FederationSpec(tuple(clients), name=name)


_DELTA_CURVES = {
    "0": (Fraction(1, 2), Fraction(1, 2)),
    "1_3": (Fraction(2, 3), Fraction(1, 3)),
    "1": (Fraction(1), Fraction(0)),
}


def _build_presets() -> dict[str, FederationSpec]:
    presets = {"group1": _scalar_spec("group1", [(Fraction(1, 2), 0.0), (Fraction(1, 2), 0.0)])}
    for dkey, (q1, q2) in _DELTA_CURVES.items():
        for z in (1, 10, 100):
            name = f"t7-d{dkey}-z{z}"
            presets[name] = _scalar_spec(name, [(q1, z), (q2, -z)])
    presets["group2"] = _scalar_spec("group2", [(Fraction(1, 2), 1.0), (Fraction(1, 2), -1.0)])
    presets["group3"] = _scalar_spec("group3", [(Fraction(2, 3), 1.0), (Fraction(1, 3), -1.0)])
    presets["group4"] = _scalar_spec("group4", [(Fraction(1), 1.0), (Fraction(0), -1.0)])
    return presets


PRESETS: dict[str, FederationSpec] = _build_presets()

# Advertised heterogeneity (zeta_star, delta) of every preset.
PRESET_CONSTANTS: dict[str, tuple[float, float]] = {
    "group1": (0.0, 0.0),
    "group2": (1.0, 0.0),
    "group3": (1.0, 1 / 3),
    "group4": (1.0, 1.0),
    **{
        f"t7-d{dkey}-z{z}": (float(z), dval)
        for dkey, dval in (("0", 0.0), ("1_3", 1 / 3), ("1", 1.0))
        for z in (1, 10, 100)
    },
}


def preset(name: str) -> FederationSpec:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None


def spec_from_dict(data: dict, name: str = "") -> FederationSpec:
    try:
        entries: Sequence[dict] = data["clients"]
        clients = tuple(
            QuadraticClient(np.atleast_2d(e["A"]), np.atleast_1d(e["b"]), e.get("c", 0.0))
            for e in entries
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed federation spec: {exc}") from exc
    return FederationSpec(clients, name=name)


def load_spec(path) -> FederationSpec:
    path = Path(path)
    with path.open() as fh:
        return spec_from_dict(json.load(fh), name=path.stem)


def save_spec(spec: FederationSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def resolve_spec(name_or_path: str) -> FederationSpec:
    """A preset name or a path to a JSON federation file."""
    if name_or_path.lower() in PRESETS:
        return preset(name_or_path)
    if Path(name_or_path).exists():
        return load_spec(name_or_path)
    raise ConfigurationError(f"{name_or_path!r} is neither a preset nor a spec file")
