"""Command-line entry point: ``hotrod <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import FEATURE_SETS, ConfigError, load_config
from .io import InputError, dumps_json, write_text

logger = logging.getLogger("hotrod")


def _common(p: argparse.ArgumentParser):
    p.add_argument("-c", "--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config leaf, e.g. --set ticc.K=4 (repeatable)")
    p.add_argument("--input", help="input directory (overrides paths.input_dir)")
    p.add_argument("--out", help="work/output directory (overrides paths.work_dir)")
    p.add_argument("--force", action="store_true", help="rerun even if up to date")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hotrod", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("preprocess", "segment days, impute, smooth, normalize"),
                        ("cluster", "Toeplitz inverse-covariance clustering of day series"),
                        ("features", "summary and infectivity features plus binary targets"),
                        ("run", "all stages in order")):
        _common(sub.add_parser(name, help=help_))
    hp = sub.add_parser("hawkes", help="infectivity matrix and Granger graph per group")
    _common(hp)
    hp.add_argument("--participants", help="comma-separated participant ids (default: all)")
    hp.add_argument("--kind", choices=("workday", "offday"), action="append",
                    help="day kind(s) to fit (default: both)")
    hp.add_argument("--group", help="name used in output files")
    ep = sub.add_parser("evaluate", help="cross-validated random-forest macro-F1")
    _common(ep)
    ep.add_argument("--feature-set", choices=FEATURE_SETS, action="append",
                    help="feature set(s) to evaluate (default: from config)")
    fp = sub.add_parser("fixture", help="write the synthetic fixture dataset")
    fp.add_argument("--seed", type=int, default=7)
    fp.add_argument("--out", required=True)
    fp.add_argument("-v", "--verbose", action="count", default=0)
    sp = sub.add_parser("simulate", help="sample event sequences from a Hawkes model JSON")
    sp.add_argument("--model", required=True,
                    help="JSON with base (U), coeffs (U x U x M) and optional basis")
    sp.add_argument("--horizon", type=float, default=1440.0, help="minutes per sequence")
    sp.add_argument("--n", type=int, default=1, help="number of sequences")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output JSON path")
    sp.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def _load(args):
    overrides = list(args.overrides)
    if args.input:
        overrides.append(f"paths.input_dir={args.input}")
    if args.out:
        overrides.append(f"paths.work_dir={args.out}")
    return load_config(args.config, overrides)


def _simulate(args) -> int:
    import json

    from .hawkes import BasisSpec, HawkesModel, simulate

    path = Path(args.model)
    if not path.exists():
        raise InputError(f"missing input file: {path}")
    try:
        spec = json.loads(path.read_text())
        basis = BasisSpec(**spec.get("basis", {}))
        model = HawkesModel(np.asarray(spec["base"], float), np.asarray(spec["coeffs"], float), basis)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad model ({exc})") from exc
    seqs = []
    for i in range(args.n):
        seq = simulate(model, args.horizon, seed=int(np.random.SeedSequence([args.seed, i])
                                                     .generate_state(1)[0]))
        seqs.append({"horizon": seq.horizon, "times": seq.times, "types": seq.types})
    write_text(args.out, dumps_json({"model": str(path.name), "seed": args.seed,
                                     "sequences": seqs}))
    return 0


def main(argv=None) -> int:
    from .pipeline import STAGES, exit_code_for, run_hawkes, run_evaluate, run_pipeline

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fixture":
            from .fixture import make_fixture

            make_fixture(args.seed, args.out)
            return 0
        if args.command == "simulate":
            return _simulate(args)
        cfg = _load(args)
        cfg.effective_workers()  # validates HOTROD_WORKERS early
        if args.command == "run":
            run_pipeline(cfg, force=args.force, stages=STAGES)
        elif args.command == "hawkes":
            parts = args.participants.split(",") if args.participants else None
            run_hawkes(cfg, force=args.force, participants=parts,
                       kinds=tuple(args.kind or ("workday", "offday")), group=args.group)
        elif args.command == "evaluate":
            try:
                run_evaluate(cfg, force=args.force, feature_sets=args.feature_set)
            except Exception as exc:
                from .pipeline import StageError

                raise StageError("evaluate", exc) from exc
        else:
            run_pipeline(cfg, force=args.force, stages=(args.command,))
    except (ConfigError, InputError) as exc:
        print(f"hotrod: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except Exception as exc:
        print(f"hotrod: error: {exc}", file=sys.stderr)
        logger.debug("traceback", exc_info=True)
        return exit_code_for(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
