#!/usr/bin/env python3
"""Train protocol variants on the synthetic corpus and print test scores.

    python scripts/run_protocol.py chs direct --epochs 10
    python scripts/run_protocol.py bu bu+rib bu+ssd --json ablation.json
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from chsnet.experiments import VARIANTS, SynthProtocol, run_variant


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("variants", nargs="*", default=["chs", "direct"], choices=sorted(VARIANTS))
    p.add_argument("--epochs", type=int, default=SynthProtocol().train.epochs)
    p.add_argument("--n", type=int, default=SynthProtocol.n)
    p.add_argument("--size", type=int, default=SynthProtocol.size)
    p.add_argument("--history-dir", type=Path, help="write one history log per variant here")
    p.add_argument("--json", type=Path, help="write the result table as JSON")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    protocol = SynthProtocol(n=args.n, size=args.size).with_epochs(args.epochs)
    rows = []
    for name in args.variants:
        hist = None
        if args.history_dir is not None:
            args.history_dir.mkdir(parents=True, exist_ok=True)
            hist = args.history_dir / f"{name.replace('+', '_')}.log"
        res = run_variant(name, protocol, history_path=hist)
        row = dict(variant=name, infection_dice=res.infection_dice, lung_dice=res.lung_dice,
                   test_loss=res.test.loss, best_epoch=res.training.best_epoch, seconds=round(res.seconds, 1))
        rows.append(row)
        lung = "-" if res.lung_dice is None else f"{res.lung_dice:.4f}"
        print(f"{name:8s} infection {res.infection_dice:.4f}  lung {lung}  "
              f"best epoch {res.training.best_epoch}  {res.seconds:.0f}s", flush=True)
    if args.json is not None:
        args.json.write_text(json.dumps(rows, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
