#!/usr/bin/env python3
"""
ReFactor KGC: CLI entry point.

Usage:
    python main.py train  --config configs/umls.json [--seed N] [--output DIR]
    python main.py eval   --config configs/umls.json --model DIR [--by-relation]
    python main.py verify [--seed N] [--graphs 100] [--steps 5]
    python main.py ablate --config configs/fb237_v1_ind.json [--seed N]

Exit status: 0 success, 1 verify divergence above the bound,
2 config / input / artifact errors, 3 numeric abort.
"""

import logging
import sys


def _setup_logging(level: str) -> None:
    try:
        from rich.logging import RichHandler
    except ImportError:
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        return
    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(rich_tracebacks=False, show_path=False)])


def _overrides(args) -> dict:
    keys = ("seed", "output", "epochs", "layers", "protocol")
    out = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "by_relation", False):
        out["by_relation"] = True
    return out


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(description="ReFactor GNN knowledge graph completion")
    sub = parser.add_subparsers(dest="verb", required=True)

    def data_verb(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="Flat JSON run config")
        p.add_argument("--seed", type=int, default=None, help="Override the config seed")
        p.add_argument("--output", default=None, help="Output directory (default RFGN_OUTPUT_DIR)")
        return p

    train = data_verb("train", "Train a model and write artifacts + metrics")
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--layers", default=None, help="Layer budget L (integer or 'inf')")

    ev = data_verb("eval", "Evaluate a saved model directory")
    ev.add_argument("--model", required=True, help="Model artifact directory")
    ev.add_argument("--protocol", choices=("full", "partial"), default=None)
    ev.add_argument("--by-relation", action="store_true", help="Also write per-relation metrics")

    verify = sub.add_parser("verify", help="Check GD == message passing on random graphs")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--graphs", type=int, default=100)
    verify.add_argument("--steps", type=int, default=5)

    ablate = data_verb("ablate", "Train with and without the global term n[v]")
    ablate.add_argument("--epochs", type=int, default=None)
    ablate.add_argument("--layers", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    from refactor_kgc.config import LOG_LEVEL, VERIFY_BOUND, load_run_config
    from refactor_kgc.errors import RefactorError
    from refactor_kgc import pipeline

    _setup_logging(LOG_LEVEL)
    log = logging.getLogger("refactor_kgc")

    try:
        if args.verb == "verify":
            worst, _ = pipeline.run_verify(seed=args.seed, graphs=args.graphs, steps=args.steps)
            print(f"max divergence {worst:.1e}")
            return 0 if worst <= VERIFY_BOUND else 1

        cfg = load_run_config(args.config, _overrides(args))
        if args.verb == "train":
            pipeline.run_train(cfg)
        elif args.verb == "eval":
            pipeline.run_eval(cfg, args.model)
        else:
            summary = pipeline.run_ablate(cfg)
            print(f"MRR delta (with - without n[v]): {summary['mrr_delta']:+.6f}")
        return 0
    except RefactorError as e:
        log.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except FileNotFoundError as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
