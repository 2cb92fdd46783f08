"""Sequential (SFL) and parallel (PFL) federated training on quadratic clients.

``run`` drives whole trajectories through the compiled kernels; the
``*_round`` functions expose a single round against a caller-supplied
generator, which is handy for hand traces and unit tests.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import kernels
from .objectives import (
    ConfigurationError,
    FederationSpec,
    NoiseModel,
    global_minimizer,
    heterogeneity,
    param_vector,
)
from .sampling import order_schedule, noise_schedule, sample_participants, sample_permutation

DIVERGENCE_THRESHOLD = 1e12

# max gradient norms used for the deep-learning runs (VGG-9 on CIFAR-10)
REFERENCE_CLIP_NORMS = {"pfl": 10.0, "sfl": 50.0}


class DivergedError(RuntimeError):
    """An iterate left the finite region during a single round."""


class Algorithm(str, enum.Enum):
    SFL = "sfl"
    PFL = "pfl"
    MINIBATCH = "minibatch"


class Averaging(str, enum.Enum):
    LAST = "last"
    UNIFORM = "uniform"
    STRONGLY_CONVEX = "strongly_convex"


_CLIP_MODES = {"step": kernels.CLIP_STEP, "update": kernels.CLIP_UPDATE}


@dataclass(frozen=True)
class RunConfig:
    algorithm: Algorithm = Algorithm.SFL
    K: int = 10
    R: int = 1000
    eta: float = 0.01
    S: int | None = None
    clip_max_norm: float | None = None
    clip_mode: str = "step"
    noise: NoiseModel = NoiseModel(0.0)
    seed: int = 1234
    averaging: Averaging = Averaging.STRONGLY_CONVEX
    mu: float | None = None
    x0: tuple[float, ...] | None = None
    divergence_threshold: float = DIVERGENCE_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "averaging", Averaging(self.averaging))
        if isinstance(self.noise, (int, float)):
            object.__setattr__(self, "noise", NoiseModel(float(self.noise)))
        if self.K < 1 or self.R < 0:
            raise ConfigurationError("need K >= 1 and R >= 0")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ConfigurationError("learning rate must be positive")
        if self.clip_max_norm is not None and not self.clip_max_norm > 0:
            raise ConfigurationError("clip_max_norm must be positive or None")
        if self.clip_mode not in _CLIP_MODES:
            raise ConfigurationError(f"clip_mode must be one of {sorted(_CLIP_MODES)}")
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))

    def participants(self, M: int) -> int:
        S = M if self.S is None else self.S
        if not 1 <= S <= M:
            raise ConfigurationError(f"S={S} must satisfy 1 <= S <= M={M}")
        return S

    def effective_lr(self, M: int) -> float:
        """Per-round step size of the bounds: ``S K eta`` for SFL, ``K eta`` otherwise."""
        if self.algorithm is Algorithm.SFL:
            return self.participants(M) * self.K * self.eta
        return self.K * self.eta

    def start(self, d: int) -> np.ndarray:
        return np.ones(d) if self.x0 is None else param_vector(self.x0, d)

    def with_(self, **changes) -> RunConfig:
        return replace(self, **changes)


@dataclass(frozen=True)
class TraceRecord:
    round: int
    x_global: np.ndarray
    dist_sq: float
    gap: float
    grad_norm_sq: float


@dataclass(frozen=True)
class AveragedIterate:
    value: np.ndarray
    W: float  # sum of the (unnormalised) weights; may overflow to inf for long runs


@dataclass
class RunResult:
    config: RunConfig
    x: np.ndarray
    dist_sq: np.ndarray
    gap: np.ndarray
    grad_norm_sq: np.ndarray
    avg_x: np.ndarray
    avg_gap: np.ndarray
    averaged: AveragedIterate
    diverged: bool
    max_applied_grad_norm: float
    eta_tilde: float
    spec_name: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(self.x.shape[0])

    @property
    def status(self) -> str:
        return "diverged" if self.diverged else "ok"

    def records(self) -> list[TraceRecord]:
        return [
            TraceRecord(r, self.x[r].copy(), float(self.dist_sq[r]), float(self.gap[r]),
                        float(self.grad_norm_sq[r]))
            for r in range(self.x.shape[0])
        ]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "dist_sq", "gap", "grad_norm_sq", "diverged"])
        flag = int(self.diverged)
        for r in range(self.x.shape[0]):
            w.writerow([r, _fmt(self.dist_sq[r]), _fmt(self.gap[r]),
                        _fmt(self.grad_norm_sq[r]), flag])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def clip(g, max_norm: float) -> np.ndarray:
    """Rescale ``g`` onto the ball of radius ``max_norm`` if it lies outside."""
    if not max_norm > 0:
        raise ConfigurationError("max_norm must be positive")
    out = param_vector(g).copy()
    kernels._clip_inplace(out, float(max_norm))
    return out


# -- trajectory metrics ------------------------------------------------------

def _metrics(spec: FederationSpec, xs: np.ndarray, x_star: np.ndarray):
    A = spec.A_mean
    e = xs - x_star
    dist_sq = np.sum(e * e, axis=1)
    # F(x) - F* = 0.5 (x - x*)^T A (x - x*) exactly for quadratics
    gap = 0.5 * np.einsum("ri,ij,rj->r", e, A, e)
    g = xs @ A.T + spec.b_mean
    return dist_sq, np.maximum(gap, 0.0), np.sum(g * g, axis=1)


def averaging_ratio(averaging: Averaging, mu: float, eta_tilde: float) -> float:
    """Ratio ``w_r / w_{r+1}`` of consecutive averaging weights.

    For ``mu * eta_tilde >= 2`` the weights are undefined; the ratio is clamped
    at 0, its limit, which puts all weight on the latest iterate.
    """
    if averaging is Averaging.STRONGLY_CONVEX:
        if mu < 0:
            raise ConfigurationError("mu must be >= 0")
        return max(0.0, 1.0 - mu * eta_tilde / 2.0)
    return 1.0


def running_average(xs: np.ndarray, q: float) -> np.ndarray:
    """Weighted averages of ``xs[0..r]`` for every ``r`` with weights ``w_t ~ q^(-t)``."""
    num = lfilter([1.0], [1.0, -q], xs, axis=0)
    den = lfilter([1.0], [1.0, -q], np.ones(xs.shape[0]))
    return num / den[:, None]


def _weight_total(R: int, q: float) -> float:
    if q == 1.0:
        return float(R + 1)
    if q == 0.0:
        return math.inf
    with np.errstate(over="ignore"):
        # sum_{r=0}^{R} q^{-(r+1)}
        return float((q ** -(R + 1) - 1.0) / (1.0 - q))


# -- whole runs --------------------------------------------------------------

def _orders(spec: FederationSpec, cfg: RunConfig) -> np.ndarray:
    M = spec.M
    S = cfg.participants(M)
    if cfg.algorithm is Algorithm.SFL:
        return order_schedule(cfg.seed, M, S, cfg.R)
    # parallel clients are visited in index order; full participation draws nothing
    if S == M:
        return np.tile(np.arange(M, dtype=np.int64), (cfg.R, 1))
    return np.sort(order_schedule(cfg.seed, M, S, cfg.R), axis=1)


def _noise(spec: FederationSpec, cfg: RunConfig) -> np.ndarray:
    if cfg.noise.sigma == 0:
        return np.zeros((spec.M, 0, 0, spec.dim))
    return noise_schedule(cfg.seed, spec.M, cfg.R, cfg.K, spec.dim, cfg.noise.sigma)


def _clip_args(cfg: RunConfig):
    c = -1.0 if cfg.clip_max_norm is None else float(cfg.clip_max_norm)
    return c, _CLIP_MODES[cfg.clip_mode]


def _call_kernel(spec, cfg, x0, orders, noise):
    c, mode = _clip_args(cfg)
    A, b = spec.A_stack, spec.b_stack
    thr = float(cfg.divergence_threshold)
    if cfg.algorithm is Algorithm.SFL:
        return kernels.sfl_kernel(A, b, x0, orders, noise, cfg.K, cfg.eta, c, mode, thr)
    if cfg.algorithm is Algorithm.PFL:
        return kernels.pfl_kernel(A, b, x0, orders, noise, cfg.K, cfg.eta, c, mode, thr)
    R = orders.shape[0]
    return kernels.minibatch_kernel(spec.A_mean[None], spec.b_mean[None], x0, noise, R,
                                    cfg.K, cfg.eta, c, thr)


def run(spec: FederationSpec, cfg: RunConfig) -> RunResult:
    """Train for ``cfg.R`` rounds and record metrics at rounds ``0..R``.

    A run that diverges is truncated at the last finite global iterate and
    flagged; it never raises for numerical blow-up.
    """
    x_star = global_minimizer(spec)
    x0 = cfg.start(spec.dim)
    orders = _orders(spec, cfg) if cfg.algorithm is not Algorithm.MINIBATCH else np.zeros((cfg.R, 0), dtype=np.int64)
    traj, done, max_norm = _call_kernel(spec, cfg, x0, orders, _noise(spec, cfg))
    xs = traj[: done + 1]
    dist_sq, gap, gns = _metrics(spec, xs, x_star)

    eta_tilde = cfg.effective_lr(spec.M)
    if cfg.averaging is Averaging.LAST:
        avg_x = xs.copy()
        W = 1.0
    else:
        mu = heterogeneity(spec).mu if cfg.mu is None else float(cfg.mu)
        q = averaging_ratio(cfg.averaging, mu, eta_tilde)
        avg_x = running_average(xs, q)
        W = _weight_total(done, q)
    _, avg_gap, _ = _metrics(spec, avg_x, x_star)
    return RunResult(
        config=cfg,
        x=xs,
        dist_sq=dist_sq,
        gap=gap,
        grad_norm_sq=gns,
        avg_x=avg_x,
        avg_gap=avg_gap,
        averaged=AveragedIterate(avg_x[-1].copy(), W),
        diverged=done < cfg.R,
        max_applied_grad_norm=float(max_norm),
        eta_tilde=eta_tilde,
        spec_name=spec.name,
    )


# -- single rounds -----------------------------------------------------------

def _round_noise(spec, cfg, rng):
    if cfg.noise.sigma == 0:
        return np.zeros((spec.M, 0, 0, spec.dim))
    std = cfg.noise.coordinate_std(spec.dim)
    return rng.normal(0.0, std, size=(spec.M, 1, cfg.K, spec.dim))


def _one_round(spec, cfg, x, orders, noise):
    x0 = param_vector(x, spec.dim)
    traj, done, _ = _call_kernel(spec, cfg, x0, orders, noise)
    if done < 1:
        raise DivergedError("iterate diverged within the round")
    return traj[1].copy()


def sfl_round(spec: FederationSpec, x, cfg: RunConfig, rng: np.random.Generator,
              order=None) -> np.ndarray:
    """One sequential round. ``order`` overrides the sampled client order."""
    cfg = cfg.with_(algorithm=Algorithm.SFL, R=1)
    S = cfg.participants(spec.M)
    if order is None:
        order = sample_participants(spec.M, S, rng).selected
    orders = np.asarray(order, dtype=np.int64).reshape(1, -1)
    return _one_round(spec, cfg, x, orders, _round_noise(spec, cfg, rng))


def pfl_round(spec: FederationSpec, x, cfg: RunConfig, rng: np.random.Generator) -> np.ndarray:
    """One parallel round: selected clients start from ``x``; the server averages."""
    cfg = cfg.with_(algorithm=Algorithm.PFL, R=1)
    S = cfg.participants(spec.M)
    if S == spec.M:
        sel = np.arange(spec.M, dtype=np.int64)
    else:
        sel = np.sort(sample_permutation(spec.M, rng)[:S])
    return _one_round(spec, cfg, x, sel.reshape(1, -1), _round_noise(spec, cfg, rng))


def minibatch_sgd_round(spec: FederationSpec, x, cfg: RunConfig,
                        rng: np.random.Generator) -> np.ndarray:
    """``K`` steps on the global objective with gradient noise of variance ``sigma^2/(MK)``."""
    cfg = cfg.with_(algorithm=Algorithm.MINIBATCH, R=1)
    return _one_round(spec, cfg, x, np.zeros((1, 0), dtype=np.int64),
                      _round_noise(spec, cfg, rng))
