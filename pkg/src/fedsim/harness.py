"""Experiment orchestration: multi-seed suites, grid search and aggregate output."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import Algorithm, RunConfig, RunResult, run
from .bounds import BoundParams, bound
from .objectives import ConfigurationError, FederationSpec, heterogeneity

# learning-rate grid and seed count used for the quadratic comparisons
LR_GRID = (0.003, 0.006, 0.01, 0.03, 0.06, 0.1, 0.3, 0.6)
DEFAULT_SEEDS = 5
DEFAULT_MASTER_SEED = 1234
DEFAULT_ROUNDS = 1000
FINAL_WINDOW = 0.1

AGGREGATE_HEADER = ["round", "median_gap", "min_gap", "max_gap",
                    "median_dist_sq", "min_dist_sq", "max_dist_sq"]

NO_STABLE_LR = "no stable learning rate"


def seed_list(master_seed: int, n: int) -> list[int]:
    """Run seeds derived from a master seed; shared by every algorithm of a suite."""
    if n < 1:
        raise ConfigurationError("need at least one seed")
    return [int(master_seed) + i for i in range(n)]


@dataclass(frozen=True)
class Cell:
    algorithm: Algorithm
    eta: float
    seed: int

    @property
    def tag(self) -> str:
        return f"{self.algorithm.value}_eta{self.eta:g}_seed{self.seed}"


@dataclass
class ExperimentSuite:
    spec: FederationSpec
    algorithms: tuple = (Algorithm.SFL, Algorithm.PFL)
    etas: tuple = LR_GRID
    seeds: tuple = tuple(seed_list(DEFAULT_MASTER_SEED, DEFAULT_SEEDS))
    base: RunConfig = field(default_factory=lambda: RunConfig(R=DEFAULT_ROUNDS))
    out_dir: Path | None = None

    def __post_init__(self):
        self.algorithms = tuple(Algorithm(a) for a in self.algorithms)
        self.etas = tuple(float(e) for e in self.etas)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.etas or not self.seeds or not self.algorithms:
            raise ConfigurationError("a suite needs at least one algorithm, learning rate and seed")
        if len(set(self.etas)) != len(self.etas) or len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("duplicate learning rates or seeds in suite")
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)

    def cells(self) -> list[Cell]:
        return [Cell(a, e, s) for a in self.algorithms for e in self.etas for s in self.seeds]

    def config(self, cell: Cell) -> RunConfig:
        return self.base.with_(algorithm=cell.algorithm, eta=cell.eta, seed=cell.seed)


@dataclass
class Aggregate:
    rounds: np.ndarray
    gap: np.ndarray      # (3, n): median, min, max
    dist_sq: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGGREGATE_HEADER)
        for i, r in enumerate(self.rounds):
            w.writerow([int(r), *(format(float(v), ".17g") for v in
                                  (*self.gap[:, i], *self.dist_sq[:, i]))])
        return buf.getvalue()


@dataclass
class SuiteResult:
    suite: ExperimentSuite
    results: dict          # Cell -> RunResult
    failures: dict         # Cell -> error message

    def runs(self, algorithm, eta) -> list[RunResult]:
        a = Algorithm(algorithm)
        return [self.results[c] for c in self.suite.cells()
                if c.algorithm is a and c.eta == eta and c in self.results]

    def aggregate(self, algorithm, eta) -> Aggregate:
        rs = self.runs(algorithm, eta)
        if not rs:
            raise ConfigurationError(f"no successful runs for {algorithm} at eta={eta}")
        # diverged runs are truncated; aggregate over the rounds every seed reached
        n = min(r.x.shape[0] for r in rs)
        gaps = np.stack([r.gap[:n] for r in rs])
        dists = np.stack([r.dist_sq[:n] for r in rs])
        band = lambda a: np.stack([np.median(a, axis=0), a.min(axis=0), a.max(axis=0)])
        return Aggregate(np.arange(n), band(gaps), band(dists))


def _run_cell(suite: ExperimentSuite, cell: Cell):
    try:
        return cell, run(suite.spec, suite.config(cell)), None
    except Exception as exc:  # recorded per cell; the suite keeps going
        return cell, None, f"{type(exc).__name__}: {exc}"


def run_suite(suite: ExperimentSuite, workers: int | None = None, write: bool = True) -> SuiteResult:
    """Run every cell of ``suite``; cells run concurrently, results are keyed by cell."""
    cells = suite.cells()
    if workers == 1 or len(cells) == 1:
        out = [_run_cell(suite, c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(lambda c: _run_cell(suite, c), cells))
    results = {c: r for c, r, e in out if r is not None}
    failures = {c: e for c, r, e in out if e is not None}
    res = SuiteResult(suite, results, failures)
    if write and suite.out_dir is not None:
        write_suite(res, suite.out_dir)
    return res


def aggregate_name(algorithm, eta) -> str:
    return f"{Algorithm(algorithm).value}_eta{eta:g}.csv"


def write_suite(res: SuiteResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    written = []
    for cell in res.suite.cells():
        r = res.results.get(cell)
        if r is None:
            continue
        p = out / "traces" / f"{cell.tag}.csv"
        r.to_csv(p)
        written.append(p)
    for a in res.suite.algorithms:
        for e in res.suite.etas:
            if res.runs(a, e):
                p = out / aggregate_name(a, e)
                p.write_text(res.aggregate(a, e).to_csv())
                written.append(p)
    if res.failures:
        p = out / "failures.txt"
        p.write_text("".join(f"{c.tag}\t{m}\n" for c, m in sorted(res.failures.items(),
                                                                  key=lambda kv: kv[0].tag)))
        written.append(p)
    return written


# -- grid search -------------------------------------------------------------

def final_window_gap(result: RunResult, window: float = FINAL_WINDOW) -> float:
    """Mean of F(x) - F* over the last ``window`` fraction of rounds; inf if diverged."""
    if result.diverged:
        return math.inf
    R = result.x.shape[0] - 1
    n = max(1, int(math.ceil(window * R)))
    return float(np.mean(result.gap[-n:]))


@dataclass(frozen=True)
class GridRow:
    algorithm: Algorithm
    eta: float
    metric: float
    diverged_seeds: int


@dataclass(frozen=True)
class GridChoice:
    algorithm: Algorithm
    eta: float | None
    metric: float
    status: str = "ok"


@dataclass
class GridResult:
    table: list
    best: dict     # Algorithm -> GridChoice
    suite_result: SuiteResult

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algorithm", "eta", "final_gap", "diverged_seeds"])
        for row in self.table:
            w.writerow([row.algorithm.value, format(row.eta, "g"),
                        format(row.metric, ".17g"), row.diverged_seeds])
        return buf.getvalue()


def grid_search(suite: ExperimentSuite, workers: int | None = None, window: float = FINAL_WINDOW,
                suite_result: SuiteResult | None = None, reduce: str = "mean") -> GridResult:
    """Pick, per algorithm, the learning rate with the lowest final-window gap.

    Per seed the score is the mean gap over the final ``window`` of rounds;
    seeds are combined with ``reduce`` (``"median"``, matching the aggregate
    curves, or ``"mean"``). A learning rate with any diverged (or failed)
    seed scores ``inf`` and ranks after every stable one.
    """
    combine = {"median": np.median, "mean": np.mean}[reduce]
    res = suite_result if suite_result is not None else run_suite(suite, workers, write=False)
    table, best = [], {}
    for a in suite.algorithms:
        rows = []
        for e in suite.etas:
            cells = [Cell(a, e, s) for s in suite.seeds]
            vals = [final_window_gap(res.results[c], window) if c in res.results else math.inf
                    for c in cells]
            bad = sum(1 for v in vals if not math.isfinite(v))
            rows.append(GridRow(a, e, float(combine(vals)) if bad == 0 else math.inf, bad))
        table.extend(rows)
        stable = [r for r in rows if math.isfinite(r.metric)]
        if not stable:
            best[a] = GridChoice(a, None, math.inf, NO_STABLE_LR)
        else:
            # ties go to the smaller learning rate (grid order)
            top = min(stable, key=lambda r: r.metric)
            best[a] = GridChoice(a, top.eta, top.metric)
    if suite.out_dir is not None:
        write_suite(res, suite.out_dir)
        Path(suite.out_dir, "grid.csv").write_text(GridResult(table, best, res).to_csv())
    return GridResult(table, best, res)


# -- bound overlay -----------------------------------------------------------

@dataclass
class Overlay:
    rounds: np.ndarray
    measured: np.ndarray   # weighted-average gap F(xbar^(r)) - F*
    bound: np.ndarray
    in_domain: np.ndarray  # rounds where 1/(mu r) <= eta_tilde

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "measured_avg_gap", "bound", "in_domain"])
        for r, m, b, ok in zip(self.rounds, self.measured, self.bound, self.in_domain):
            w.writerow([int(r), format(float(m), ".17g"), format(float(b), ".17g"), int(ok)])
        return buf.getvalue()


def bound_overlay(spec: FederationSpec, result: RunResult, case="strongly_convex") -> Overlay:
    """Evaluate the upper bound at the run's effective learning rate for every round ``r >= 1``."""
    cfg = result.config
    if cfg.algorithm is Algorithm.MINIBATCH:
        raise ConfigurationError("no bound is provided for the minibatch baseline")
    rep = heterogeneity(spec)
    D = float(np.sqrt(result.dist_sq[0]))
    S = cfg.participants(spec.M)
    part = "full" if S == spec.M else "partial"
    base = BoundParams.from_report(rep, M=spec.M, S=S, K=cfg.K, R=1, eta_tilde=result.eta_tilde,
                                   sigma=cfg.noise.sigma, D=D, A=float(result.gap[0]))
    rounds = np.arange(1, result.x.shape[0])
    vals = np.array([bound(base.with_(R=int(r)), cfg.algorithm.value, case, part, check=False)
                     for r in rounds])
    ok = result.eta_tilde * rep.mu * rounds >= 1.0
    return Overlay(rounds, result.avg_gap[1:], vals, ok)
