"""Command-line entry point: ``fedsim {simulate,compare,bound,partition,plot}``.

A ``--config`` INI file may supply defaults. Section ``[run]`` mirrors
RunConfig fields (``K``, ``R``, ``eta``, ``S``, ``sigma``, ``clip_max_norm``,
``clip_mode``, ``averaging``); section ``[suite]`` holds ``preset``,
``algorithms``, ``grid``, ``seeds``, ``master_seed`` and ``out``. Command-line
flags override the file, and ``FEDSIM_SEED`` overrides the master seed.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds as B
from .algorithms import REFERENCE_CLIP_NORMS, Algorithm, RunConfig
from .harness import (DEFAULT_MASTER_SEED, DEFAULT_ROUNDS, LR_GRID, DEFAULT_SEEDS, ExperimentSuite,
                      aggregate_name, grid_search, run_suite, seed_list)
from .objectives import ConfigurationError, resolve_spec
from .partitioner import LabeledDataset, exdir, partition_stats, read_labels, save_partition
from .plotting import plot_files

log = logging.getLogger("fedsim")

SEED_ENV = "FEDSIM_SEED"


def _floats(text):
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def _algos(text):
    return tuple(Algorithm(t.strip().lower()) for t in str(text).split(",") if t.strip())


def load_config(path) -> dict:
    """Flatten ``[run]`` and ``[suite]`` sections into one dict of strings."""
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep K, R, S as written
    if not cp.read(path):
        raise ConfigurationError(f"cannot read config file {path}")
    out = {}
    for section in ("run", "suite"):
        if cp.has_section(section):
            out.update({k: v.strip().strip('"') for k, v in cp.items(section)})
    return out


def master_seed(arg_value, cfg) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        return int(env)
    if arg_value is not None:
        return int(arg_value)
    return int(cfg.get("master_seed", DEFAULT_MASTER_SEED))


def _pick(args, cfg, name, key=None, conv=str, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    key = key or name
    return conv(cfg[key]) if key in cfg and cfg[key] != "" else default


def _opt_float(v):
    return None if str(v).lower() in ("", "none", "off") else float(v)


def _run_config(args, cfg) -> RunConfig:
    clip = _pick(args, cfg, "clip", "clip_max_norm", _opt_float)
    return RunConfig(
        K=_pick(args, cfg, "K", conv=int, default=10),
        R=_pick(args, cfg, "rounds", "R", int, DEFAULT_ROUNDS),
        eta=_pick(args, cfg, "eta", conv=float, default=0.01),
        S=_pick(args, cfg, "S", conv=int),
        clip_max_norm=clip,
        clip_mode=_pick(args, cfg, "clip_mode", conv=str, default="step"),
        noise=_pick(args, cfg, "sigma", conv=float, default=0.0),
        averaging=_pick(args, cfg, "averaging", conv=str, default="strongly_convex"),
    )


def _suite(args, cfg, etas, algorithms) -> ExperimentSuite:
    name = _pick(args, cfg, "preset", default=None) or _pick(args, cfg, "spec", default=None)
    if name is None:
        raise ConfigurationError("give --preset or --spec (or 'preset' in the config file)")
    n = _pick(args, cfg, "seeds", conv=int, default=DEFAULT_SEEDS)
    out = _pick(args, cfg, "out", default=None)
    return ExperimentSuite(
        spec=resolve_spec(name),
        algorithms=algorithms,
        etas=etas,
        seeds=tuple(seed_list(master_seed(args.seed, cfg), n)),
        base=_run_config(args, cfg),
        out_dir=Path(out) if out else None,
    )


def _plot_suite(suite, etas_by_algo, title):
    if suite.out_dir is None:
        return None
    paths = [suite.out_dir / aggregate_name(a, e) for a, e in etas_by_algo]
    paths = [p for p in paths if p.exists()]
    if not paths:
        return None
    labels = [f"{a.value.upper()} eta={e:g}" for a, e in etas_by_algo][: len(paths)]
    out = suite.out_dir / "gap.svg"
    plot_files(paths, out, metric="gap", title=title, labels=labels)
    return out


def cmd_simulate(args, cfg):
    algos = _algos(_pick(args, cfg, "algo", "algorithms", default="sfl,pfl"))
    suite_eta = _pick(args, cfg, "eta", conv=float, default=0.01)
    suite = _suite(args, cfg, (suite_eta,), algos)
    res = run_suite(suite, workers=args.workers)
    for a in algos:
        agg = res.aggregate(a, suite_eta)
        print(f"{a.value}: eta={suite_eta:g} rounds={agg.rounds[-1]} "
              f"median final gap={agg.gap[0, -1]:.6g} median final dist_sq={agg.dist_sq[0, -1]:.6g}")
    for c, msg in sorted(res.failures.items(), key=lambda kv: kv[0].tag):
        print(f"failed {c.tag}: {msg}", file=sys.stderr)
    svg = _plot_suite(suite, [(a, suite_eta) for a in algos], suite.spec.name)
    if svg:
        print(f"wrote {suite.out_dir}")
    return 0


def cmd_compare(args, cfg):
    algos = _algos(_pick(args, cfg, "algo", "algorithms", default="sfl,pfl"))
    grid = _pick(args, cfg, "grid", conv=_floats, default=LR_GRID)
    suite = _suite(args, cfg, grid, algos)
    gr = grid_search(suite, workers=args.workers)
    chosen = []
    for a in algos:
        b = gr.best[a]
        if b.eta is None:
            print(f"{a.value}: {b.status}")
        else:
            print(f"{a.value}: best eta={b.eta:g} final-window gap={b.metric:.6g}")
            chosen.append((a, b.eta))
    if suite.out_dir is not None:
        _plot_suite(suite, chosen, f"{suite.spec.name}: best learning rates")
        print(f"wrote {suite.out_dir}")
    return 0 if chosen else 2


def _bound_params(args) -> B.BoundParams:
    return B.BoundParams(mu=args.mu, L=args.L, sigma=args.sigma, zeta_star_sq=args.zeta_star ** 2,
                         beta_sq=args.beta_sq, zeta_sq=args.zeta_sq, M=args.M, S=args.S, K=args.K,
                         R=args.R, eta_tilde=1.0, D=args.D, A=args.A)


def cmd_bound(args, cfg):
    case = B._case(args.case)
    p = _bound_params(args)
    part = "partial" if args.S is not None and args.S < args.M else "full"
    table = {}
    for algo in ("sfl", "pfl"):
        eta = args.eta_tilde if args.eta_tilde is not None else B.tuned_eta_tilde(p, algo, case, part)
        q = p.with_(eta_tilde=eta)
        entry = {"eta_tilde": eta}
        try:
            entry["bound_terms"] = B.bound_terms(q, algo, case, part)
            entry["bound"] = B.bound(q, algo, case, part)
            entry["dominant"] = B.dominant_term(q, algo, case, part)[0]
        except B.BoundDomainError as exc:
            entry["bound_error"] = str(exc)
        entry["rate_terms"] = B.tuned_rate_terms(q, algo, case, part, polylog=args.polylog)
        entry["rate"] = B.tuned_rate(q, algo, case, part, polylog=args.polylog)
        table[algo] = entry
    if args.format == "json":
        print(json.dumps({"case": case.value, "participation": part, **table}, indent=2))
        return 0
    names = ["optimization", "noise", "sampling", "noise_drift", "heterogeneity_drift"]
    print(f"case={case.value} participation={part}")
    print(f"{'':24}{'SFL':>16}{'PFL':>16}")
    print(f"{'eta_tilde':24}{table['sfl']['eta_tilde']:>16.6g}{table['pfl']['eta_tilde']:>16.6g}")
    for block, label in (("bound_terms", "bound"), ("rate_terms", "rate (order-level)")):
        print(f"-- {label}")
        for n in names:
            cells = [f"{table[a][block][n]:>16.6g}" if block in table[a] else f"{'n/a':>16}"
                     for a in ("sfl", "pfl")]
            print(f"{n:24}{''.join(cells)}")
        key = "bound" if block == "bound_terms" else "rate"
        cells = [f"{table[a][key]:>16.6g}" if key in table[a] else f"{'n/a':>16}" for a in ("sfl", "pfl")]
        print(f"{'total':24}{''.join(cells)}")
    for a in ("sfl", "pfl"):
        if "bound_error" in table[a]:
            print(f"{a}: bound not applicable: {table[a]['bound_error']}")
    return 0


def cmd_partition(args, cfg):
    labels = read_labels(args.labels, args.format)
    ds = LabeledDataset.from_labels(labels, args.num_classes)
    seed = master_seed(args.seed, cfg)
    part = exdir(ds, args.M, args.C, args.alpha, seed)
    save_partition(part, args.out)
    st = partition_stats(part, ds)
    print(f"clients={part.M} samples={st.total} mean pairwise TV={st.mean_pairwise_tv:.6f} "
          f"violations={len(st.violations)}")
    if args.stats:
        np.savetxt(args.stats, st.histograms, fmt="%d", delimiter=",")
    return 0


def cmd_plot(args, cfg):
    plot_files(args.inputs, args.out, metric=args.metric, title=args.title or "")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedsim", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="INI file with [run] and [suite] sections")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_opts(p, multi_eta):
        p.add_argument("--preset", help="group1..group4 or t7-d<delta>-z<zeta>")
        p.add_argument("--spec", help="federation spec JSON file")
        p.add_argument("--algo", help="comma-separated: sfl,pfl,minibatch")
        if not multi_eta:
            p.add_argument("--eta", type=float)
        else:
            p.add_argument("--grid", type=_floats)
        p.add_argument("--rounds", type=int)
        p.add_argument("--K", "-K", dest="K", type=int)
        p.add_argument("--S", "-S", dest="S", type=int)
        p.add_argument("--sigma", type=float)
        p.add_argument("--clip", type=_opt_float,
                       help=f"max gradient norm (deep-learning runs used {REFERENCE_CLIP_NORMS})")
        p.add_argument("--clip-mode", choices=["step", "update"])
        p.add_argument("--averaging", choices=["last", "uniform", "strongly_convex"])
        p.add_argument("--seeds", type=int, help="number of seeds")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--workers", type=int)
        p.add_argument("--out")

    s = sub.add_parser("simulate", help="run one learning rate over several seeds")
    run_opts(s, False)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="grid-search the learning rate per algorithm")
    run_opts(c, True)
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bound", help="print SFL and PFL bound terms side by side")
    b.add_argument("--case", default="strongly-convex",
                   choices=["strongly-convex", "general-convex", "non-convex"])
    b.add_argument("--mu", type=float, default=0.0)
    b.add_argument("--L", type=float, default=1.0)
    b.add_argument("--sigma", type=float, default=0.0)
    b.add_argument("--zeta-star", type=float, default=0.0)
    b.add_argument("--beta-sq", type=float, default=0.0)
    b.add_argument("--zeta-sq", type=float, default=0.0)
    b.add_argument("--M", "-M", dest="M", type=int, default=1)
    b.add_argument("--S", "-S", dest="S", type=int)
    b.add_argument("--K", "-K", dest="K", type=int, default=1)
    b.add_argument("--R", "-R", dest="R", type=int, default=1000)
    b.add_argument("--D", type=float, default=1.0)
    b.add_argument("--A", type=float, default=1.0)
    b.add_argument("--eta-tilde", type=float, help="default: the tuned value")
    b.add_argument("--polylog", action="store_true", help="keep the log factor in tuned rates")
    b.add_argument("--format", choices=["text", "json"], default="text")
    b.set_defaults(func=cmd_bound)

    p = sub.add_parser("partition", help="ExDir(C, alpha) label partition")
    p.add_argument("--labels", required=True)
    p.add_argument("--format", choices=["i32", "csv"], default="i32")
    p.add_argument("--num-classes", type=int)
    p.add_argument("-M", type=int, required=True)
    p.add_argument("-C", type=int, required=True)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="write the client-by-class histogram CSV here")
    p.set_defaults(func=cmd_partition)

    pl = sub.add_parser("plot", help="render trace or aggregate CSVs to SVG")
    pl.add_argument("--in", dest="inputs", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--metric", choices=["gap", "dist_sq"], default="gap")
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config) if args.config else {}
        return args.func(args, cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
