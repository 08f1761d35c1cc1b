"""Command line entry point ``rbmlrom``.

Subcommands: ``run``, ``fom-solve``, ``train-ml``, ``report``, ``selftest``.
Failures print one JSON object ``{"error": ..., "type": ...}`` to stderr and
exit with status 1 (2 for usage errors, as argparse does).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import driver, hierarchy, selftest
from . import fom as fom_mod


def _config(args) -> driver.RunConfig:
    cfg = driver.load_config(args.config) if args.config else driver.RunConfig()
    return cfg.with_overrides(seed=args.seed, backend=args.backend, out_dir=args.out)


def cmd_run(args) -> dict:
    cfg = _config(args)
    rep = driver.run_monte_carlo(cfg)
    return {"out_dir": cfg.out_dir, "n_mc": rep["n_mc"], "mean": rep["mean"],
            "variance": rep["variance"], "counts": rep["counts"]}


def cmd_fom_solve(args) -> dict:
    cfg = _config(args)
    if args.mu is not None:
        mu = np.array([float(v) for v in args.mu.split(",")])
    elif args.config and "mu" in json.loads(Path(args.config).read_text()):
        mu = np.array(json.loads(Path(args.config).read_text())["mu"], dtype=float)
    else:
        mu = 0.5 * (cfg.domain.lower + cfg.domain.upper)
    if not cfg.domain.contains(mu):
        raise ValueError(f"mu={mu.tolist()} lies outside the parameter domain")
    model = fom_mod.assemble(cfg.fom)
    traj = fom_mod.solve(model, mu)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fom_mod.save_trajectory(out / "trajectory.trj", traj)
    series = fom_mod.output(model, traj)
    return {"trajectory": str(out / "trajectory.trj"), "mu": mu.tolist(),
            "f_bar": fom_mod.time_average(series, cfg.fom.T)}


def cmd_train_ml(args) -> dict:
    if not args.state:
        raise ValueError("train-ml needs --state DIR (a saved hierarchy state)")
    state = driver.load_state(args.state)
    if args.seed is not None:
        state.config.seed = args.seed
    ml = driver.train_offline(state, args.backend)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ml_rom.json"
    path.write_text(json.dumps(ml.to_dict()))
    return {"ml_rom": str(path), "n_samples": len(state.train_X), "n_rb": ml.n_rb}


def cmd_report(args) -> dict:
    path = Path(args.log)
    if path.is_dir():
        path = path / "queries.csv"
    _, rows = driver.read_query_log(path)
    summ = driver.summarize_log(rows)
    print(driver.format_report(summ), file=sys.stderr)
    return summ


def cmd_selftest(args) -> dict:
    res = selftest.run()
    failed = [k for k, v in res.items() if not v["passed"]]
    if failed:
        raise RuntimeError(f"selftest failed: {failed} {json.dumps(res, default=str)}")
    return res


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbmlrom", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--backend", choices=hierarchy.BACKENDS, help="override the ML backend")

    sp = sub.add_parser("run", help="full Monte Carlo experiment")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("fom-solve", help="single FOM solve to a trajectory file")
    common(sp)
    sp.add_argument("--mu", help="comma-separated parameter (default: domain center)")
    sp.set_defaults(func=cmd_fom_solve)

    sp = sub.add_parser("train-ml", help="offline ML fit from a saved training buffer")
    common(sp)
    sp.add_argument("--state", help="state directory written by 'run'")
    sp.set_defaults(func=cmd_train_ml)

    sp = sub.add_parser("report", help="summary table from a query log")
    sp.add_argument("log", help="queries.csv or a run directory")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("selftest", help="run the oracle suites")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
