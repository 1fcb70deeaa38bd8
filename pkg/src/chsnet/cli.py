"""Command-line entry point: ``chsnet <command> [options]``.

Commands: train, eval, predict, uncertainty, synth, inspect, gradcheck.
Every command exits 0 on success and prints a one-line ``error: ...`` with a
nonzero status on failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .blocks import dsc_cost_ratio
from .config import RunConfig, format_config, load_config
from .data import load_dataset, load_image, save_dataset, synth_dataset, write_mask, write_probability, write_tensor
from .errors import ConfigurationError, ContractError, NonFiniteError, ShapeError
from .network import build_model, dsc_layers, load_checkpoint, parameter_census, save_checkpoint
from .train import evaluate, predict, train
from .uncertainty import LN2, mc_dropout_uncertainty

log = logging.getLogger("chsnet")

EXIT_FAILURE = 1
EXPECTED_ERRORS = (ConfigurationError, ShapeError, ContractError, NonFiniteError, OSError, KeyError)


def _run_dir(args) -> Path:
    if args.run_dir:
        d = Path(args.run_dir)
    else:
        d = Path(args.runs) / time.strftime("%Y%m%d-%H%M%S")
    (d / "masks").mkdir(parents=True, exist_ok=True)
    return d


def _size(cfg: RunConfig) -> tuple[int, int]:
    return cfg.net.input_size[0], cfg.net.input_size[1]


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    manifest, samples = load_dataset(args.data, _size(cfg), cfg.split_seed, cfg.balance)
    run = _run_dir(args)
    (run / "config").write_text(format_config(cfg))
    model = build_model(cfg.net, cfg.model)
    tr, va = manifest.select(samples, "train"), manifest.select(samples, "val")
    result = train(model, tr, va, cfg.train, history_path=run / "history")
    save_checkpoint(model, run / "checkpoint")
    test = manifest.select(samples, "test")
    if test:
        ev = evaluate(model, test, cfg.train.batch_size, cfg.train.threshold, cfg.train.loss_reduction)
        (run / "metrics.json").write_text(_metrics_json(ev))
        lung, inf = predict(model, np.stack([s.image for s in test]).astype(cfg.net.dtype), cfg.train.batch_size)
        for i, s in enumerate(test):
            write_mask(run / "masks" / f"{s.id}_infection.pgm", inf[i] >= cfg.train.threshold)
            if lung is not None:
                write_mask(run / "masks" / f"{s.id}_lung.pgm", lung[i] >= cfg.train.threshold)
    print(f"run directory: {run}")
    print(f"epochs: {len(result.val_losses())}, best epoch: {result.best_epoch}, stopped early: {result.stopped_early}")
    return 0


def _metrics_json(ev) -> str:
    d = {"loss": ev.loss, "infection": ev.infection.to_dict()}
    if ev.lung is not None:
        d["lung"] = ev.lung.to_dict()
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def _report_lines(name, rep) -> list[str]:
    return [f"{name}: tp={rep.tp} tn={rep.tn} fp={rep.fp} fn={rep.fn}",
            f"{name}: " + " ".join(f"{k}={v:.4f}" for k, v in rep.scores().items())]


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    size = model.cfg.input_size[:2]
    manifest, samples = load_dataset(args.data, size, args.split_seed)
    chosen = samples if args.split == "all" else manifest.select(samples, args.split)
    if not chosen:
        raise ConfigurationError(f"split {args.split!r} is empty")
    ev = evaluate(model, chosen, args.batch_size, args.threshold)
    lines = [f"samples: {len(chosen)}", f"loss: {ev.loss:.6f}"] + _report_lines("infection", ev.infection)
    if ev.lung is not None:
        lines += _report_lines("lung", ev.lung)
    print("\n".join(lines))
    if args.out:
        Path(args.out).write_text(_metrics_json(ev))
    return 0


def _load_input(model, path) -> np.ndarray:
    return load_image(path, model.cfg.input_size[:2])


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    img = _load_input(model, args.image)
    lung, inf = predict(model, img[None].astype(model.cfg.dtype))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    write_mask(out / f"{stem}_infection.pgm", inf[0] >= args.threshold)
    if lung is not None:
        write_mask(out / f"{stem}_lung.pgm", lung[0] >= args.threshold)
    print(f"masks written to {out}")
    return 0


def cmd_uncertainty(args) -> int:
    model = load_checkpoint(args.checkpoint)
    img = _load_input(model, args.image)
    um = mc_dropout_uncertainty(model, img, args.samples, args.seed, args.dropout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    write_probability(out / f"{stem}_mean.pgm", um.mean_mask)
    write_probability(out / f"{stem}_entropy.pgm", um.entropy, scale=LN2)
    write_tensor(out / f"{stem}_mean.tnsr", um.mean_mask)
    write_tensor(out / f"{stem}_entropy.tnsr", um.entropy)
    print(f"mean entropy {um.entropy.mean():.6f} (max {um.entropy.max():.6f}); maps written to {out}")
    return 0


def cmd_synth(args) -> int:
    samples = synth_dataset(args.n, args.size, args.seed)
    save_dataset(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_inspect(args) -> int:
    if bool(args.checkpoint) == bool(args.config):
        raise ConfigurationError("inspect needs exactly one of --checkpoint or --config")
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        cfg = load_config(args.config)
        model = build_model(cfg.net, cfg.model)
    census = parameter_census(model)
    if args.layers:
        for name, n in census.per_layer.items():
            print(f"{name:70s} {n:>10d}")
    print("depthwise separable layers (f, d, r, DSC/SC weight ratio, 1/r + 1/f^2):")
    for name, layer in dsc_layers(model):
        ratio, _, _ = dsc_cost_ratio(layer.f, layer.d, layer.r)
        print(f"  {name:66s} f={layer.f} d={layer.d} r={layer.r} ratio={ratio:.6f} closed={1 / layer.r + 1 / layer.f ** 2:.6f}")
    print(f"total parameters: {census.total}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import all_cases, block_cases, loss_cases, op_cases, passed, run_suite

    cases = op_cases(args.seed) + loss_cases(args.seed)
    if not args.quick:
        cases += block_cases(args.seed)
    if args.full:
        cases = all_cases(args.seed)
    failures = []

    def report(name, res):
        ok = passed(res)
        if not ok:
            failures.append(name)
        extra = f" (skipped {res.skipped} kink entries)" if res.skipped else ""
        print(f"{'PASS' if ok else 'FAIL'} {name:32s} max rel error {float(res):.3e}{extra}", flush=True)

    run_suite(args.seed, cases, report)
    if failures:
        print(f"error: gradient check failed for {', '.join(failures)}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chsnet", description="Hierarchical lung / infection segmentation.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file and dataset directory")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--runs", default="runs", help="parent directory for timestamped run directories")
    t.add_argument("--run-dir", help="exact run directory (overrides --runs)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    e.add_argument("--split-seed", type=int, default=0)
    e.add_argument("--batch-size", type=int, default=16)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out", help="write the report as JSON here")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write lung and infection masks for one image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.set_defaults(func=cmd_predict)

    u = sub.add_parser("uncertainty", help="MC-dropout mean mask and entropy map for one image")
    u.add_argument("--checkpoint", required=True)
    u.add_argument("--image", required=True)
    u.add_argument("--out", required=True)
    u.add_argument("--samples", type=int, default=20)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--dropout", type=float, default=None, help="override the network's dropout rate")
    u.set_defaults(func=cmd_uncertainty)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    i = sub.add_parser("inspect", help="parameter census and DSC ratios")
    i.add_argument("--checkpoint")
    i.add_argument("--config")
    i.add_argument("--layers", action="store_true", help="print the per-parameter table")
    i.set_defaults(func=cmd_inspect)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--quick", action="store_true", help="ops and losses only")
    g.add_argument("--full", action="store_true", help="include the miniature network")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
