"""Command-line entry point: ``mtmia {toy,audit,fidelity,decompose-attack}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .datagen import ToySpec
from .errors import ConfigError, DataError, MTMIAError
from .pipeline import METRIC_COLUMNS, AuditConfig, run_audit, run_decompose_attack, run_fidelity, run_toy


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="audit config JSON")
    p.add_argument("--output-dir", help="override output_dir")
    p.add_argument("--seed", type=int, help="override seed")
    p.add_argument("--epochs", type=int, help="override encoder epochs")
    p.add_argument("--checkpoint", help="use a trained encoder checkpoint instead of training")


def _load_config(args) -> AuditConfig:
    overrides = {
        "output_dir": args.output_dir,
        "seed": args.seed,
        "encoder.epochs": args.epochs,
        "checkpoint": args.checkpoint,
    }
    return AuditConfig.load(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtmia", description="User-level membership inference audits for multi-table synthetic data")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    toy = sub.add_parser("toy", help="write the customer/transaction toy benchmark")
    toy.add_argument("--out", required=True)
    toy.add_argument("--members", type=int, default=500)
    toy.add_argument("--nonmembers", type=int, default=500)
    toy.add_argument("--member-children", type=int, default=100)
    toy.add_argument("--nonmember-children", type=int, default=1)
    toy.add_argument("--customer-dim", type=int, default=5)
    toy.add_argument("--transaction-dim", type=int, default=5)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--generator", choices=("memorizing", "independent"), default="memorizing")
    toy.add_argument("--noise", type=float, default=1.0, help="feature noise scale of the memorizing mock")
    toy.add_argument("--epochs", type=int, help="encoder epochs written into toy.json")

    for name, help_ in (
        ("audit", "run attacks and write reports"),
        ("fidelity", "score synthetic-data fidelity against the training data"),
        ("decompose-attack", "DCR on raw rows and on each embedding space"),
    ):
        _add_config_args(sub.add_parser(name, help=help_))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "toy":
            try:
                spec = ToySpec(args.members, args.nonmembers, args.member_children, args.nonmember_children,
                               args.customer_dim, args.transaction_dim, args.seed)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            enc = {"epochs": args.epochs} if args.epochs is not None else None
            path = run_toy(args.out, spec, args.generator, args.noise, encoder=enc)
            print(path)
        elif args.command == "audit":
            res = run_audit(_load_config(args))
            for (attack, space), rep in res["reports"].items():
                t = rep.tpr_at_fpr
                print(f"{attack:6s} {space:10s} AUC={rep.auc:.4f} TPR@0={t[0.0]:.3f} TPR@1e-3={t[1e-3]:.3f} TPR@1e-2={t[1e-2]:.3f}")
        elif args.command == "fidelity":
            print(json.dumps({k: v for k, v in run_fidelity(_load_config(args)).to_dict().items() if k != "detail"}, indent=2))
        elif args.command == "decompose-attack":
            table = run_decompose_attack(_load_config(args))
            print("embedding  " + "  ".join(f"{c:>9s}" for c in METRIC_COLUMNS))
            for row, metrics in table.items():
                print(f"{row:10s} " + "  ".join(f"{metrics[c]:9.4f}" for c in METRIC_COLUMNS))
    except MTMIAError as exc:
        _fail(exc, exc.exit_code)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        _fail(exc, DataError.exit_code)
        return DataError.exit_code
    return 0


def _fail(exc: Exception, code: int) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
