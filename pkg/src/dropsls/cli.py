"""Command-line entry point: synthesize, certify, simulate, compare, oracle.

Exit codes: 0 success, 2 infeasible or uncertified, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bankio import load_bank, save_bank
from .errors import CertificationError, ConfigError, InfeasibleError
from .experiment import (
    ExperimentConfig,
    bank_record,
    dare_lqr_oracle,
    run_experiment,
    scenario_name,
    simulate_banks,
    synthesize_banks,
    write_metrics,
)
from .runtime import MODES
from .synthesis import certify_bank

EXIT_OK, EXIT_UNCERTIFIED, EXIT_CONFIG = 0, 2, 3


def _modes(arg):
    return MODES if arg == "both" else (arg,)


def _config(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig()
    return ExperimentConfig.load(args.config)


def _out(args, cfg) -> Path:
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synthesize(args):
    cfg = _config(args)
    out = _out(args, cfg) / "banks"
    out.mkdir(parents=True, exist_ok=True)
    banks = synthesize_banks(cfg, _modes(args.mode))
    for (name, mode), bank in banks.items():
        path = save_bank(bank, out / f"{name}_{mode}.bank")
        if args.text:
            save_bank(bank, out / f"{name}_{mode}.txt", text=True)
        rec = bank_record(bank)
        print(f"{path}: lambda={rec['lambda']:.6g} bound={rec['bound']:.6g} "
              f"worst_residual={rec['worst_residual']:.6g}")
    return EXIT_OK


def cmd_certify(args):
    status = EXIT_OK
    for path in args.bank:
        cert = certify_bank(load_bank(path))
        verdict = "certified" if cert.certified else "NOT certified"
        where = ""
        if not cert.certified and cert.worst_key is not None:
            i, S = cert.worst_key
            where = f" (subsystem {i}, pattern {sorted(S)})"
        print(f"{path}: {verdict}, worst residual {cert.worst_residual:.12g}{where}")
        if not cert.certified:
            status = EXIT_UNCERTIFIED
    return status


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args, cfg)
    bank_dir = Path(args.bank_dir) if args.bank_dir else out / "banks"
    banks = {}
    for d_values in cfg.scenarios:
        name = scenario_name(d_values)
        for mode in _modes(args.mode):
            path = bank_dir / f"{name}_{mode}.bank"
            if not path.exists():
                raise ConfigError(f"missing bank file {path}; run 'synthesize' first")
            bank = load_bank(path)
            cert = certify_bank(bank)
            if not cert.certified:
                raise CertificationError(f"{path} is not certified (worst residual {cert.worst_residual:.6g})")
            banks[(name, mode)] = bank
    results = simulate_banks(cfg, banks, out, args.seed_offset)
    write_metrics(results, out, [s + args.seed_offset for s in cfg.seeds])
    for (name, mode), (_, m) in results.items():
        print(f"{name} {mode}: mean total cost {m.mean_total:.6f}")
    return EXIT_OK


def cmd_compare(args):
    cfg = _config(args)
    res = run_experiment(cfg, _out(args, cfg), _modes(args.mode), args.seed_offset)
    for name, rec in res["manifest"]["scenarios"].items():
        parts = [f"{mode} {r['mean_total_cost']:.6f}" for mode, r in rec.items()]
        print(f"{name}: " + ", ".join(parts))
    return EXIT_OK


def cmd_oracle(args):
    cfg = _config(args)
    sys_ = cfg.system()
    Q, R = cfg.weights(sys_)
    res = dare_lqr_oracle(sys_, Q, R, cfg.sigma)
    print(json.dumps({"stationary_cost": res.cost, "iterations": res.iterations,
                      "residual": res.residual, "K": res.K.tolist()}, indent=2))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="dropsls", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mode=True):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (defaults to the config's output_dir)")
        p.add_argument("--seed-offset", type=int, default=0)
        if mode:
            p.add_argument("--mode", choices=["offline", "online", "both"], default="both")

    p = sub.add_parser("synthesize", help="synthesize and write bank files")
    common(p)
    p.add_argument("--text", action="store_true", help="also write the plain-text bank variant")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("certify", help="recheck the small-gain certificate of bank files")
    p.add_argument("bank", nargs="+")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="run rollouts from existing bank files")
    common(p)
    p.add_argument("--bank-dir", help="directory holding <scenario>_<mode>.bank files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="full offline-vs-online pipeline")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", help="print the centralized Riccati baseline")
    common(p, mode=False)
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleError, CertificationError) as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED


if __name__ == "__main__":
    sys.exit(main())
