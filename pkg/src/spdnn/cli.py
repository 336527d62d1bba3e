"""Command-line interface.

Subcommands: merge, params, gen-data, train, eval, graph-dump.  Exit codes:
0 success, 2 unreadable/unparseable input or bad usage, 3 infeasible
parameter parity, 4 checkpoint/network mismatch, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import data as data_mod
from . import metrics as metrics_mod
from .arch import ArchError, count_params
from .engine.checkpoint import CheckpointError, CheckpointMismatchError, load_checkpoint, save_checkpoint
from .engine.network import NumericError, run_forward
from .engine.train import TrainConfig, loss_csv_text, train_network
from .fileio import write_bytes_atomic, write_text_atomic
from .graph import contract, dump_graph, network_to_graph, parallel_compose
from .merge import InfeasibleParityError, MergedNetworkSpec, MergeOptions, chain_to_merged, parse_any, serialize_merged, spdnn_merge

EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_MISMATCH = 4
EXIT_NUMERIC = 5


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _read_text(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_INPUT) from None


def _load_network(path):
    try:
        return parse_any(_read_text(path))
    except ArchError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INPUT) from None


def _load_plain_networks(paths):
    specs = []
    for path in paths:
        spec = _load_network(path)
        if isinstance(spec, MergedNetworkSpec):
            raise CliError(f"{path}: expected a plain network file, got a merged one", EXIT_INPUT)
        specs.append(spec)
    return specs


def _as_merged(spec):
    return spec if isinstance(spec, MergedNetworkSpec) else chain_to_merged(spec)


def cmd_merge(args):
    parents = _load_plain_networks(args.inputs)
    opts = MergeOptions(
        target_params=args.target_params,
        parity_tolerance=args.tolerance,
        output_merge_kernel=args.merge_kernel,
    )
    try:
        merged = spdnn_merge(parents, opts)
    except InfeasibleParityError as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE) from None
    write_text_atomic(args.output, serialize_merged(merged))
    cin = parents[0].input_shape[2]
    counts = [count_params(p, p.input_shape[2]) for p in parents]
    for parent, n in zip(parents, counts):
        print(f"parent {parent.name}: {n} params")
    target = args.target_params if args.target_params else sum(counts) / len(counts)
    merged_count = merged.count_params(cin)
    parity = abs(merged_count - target) / target
    print(f"merged {merged.name}: {merged_count} params "
          f"(target {target:.1f}, parity {parity:.2%})")
    print(f"wrote {args.output}")
    return 0


def cmd_params(args):
    for path in args.inputs:
        spec = _load_network(path)
        cin = spec.input_shape[2]
        n = spec.count_params(cin) if isinstance(spec, MergedNetworkSpec) else count_params(spec, cin)
        print(f"{spec.name}: {n} params")
    return 0


def cmd_gen_data(args):
    try:
        dataset = data_mod.generate(seed=args.seed, count=args.count, size=args.size)
    except data_mod.DataError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    data_mod.save_set(args.output, dataset)
    split = dataset.split
    print(f"wrote {args.output}: {dataset.count} samples of {dataset.size}x{dataset.size}, "
          f"split {len(split.train)}/{len(split.val)}/{len(split.test)}")
    return 0


def _load_dataset(path):
    try:
        return data_mod.load_set(path)
    except (OSError, data_mod.DataError) as exc:
        raise CliError(f"cannot load dataset {path}: {exc}", EXIT_INPUT) from None


def cmd_train(args):
    spec = _as_merged(_load_network(args.network))
    dataset = _load_dataset(args.data)
    cfg = TrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        precision=args.precision,
    )
    resolved = {
        "network": spec.name,
        "data": args.data,
        "epochs": cfg.epochs,
        "lr": cfg.learning_rate,
        "momentum": cfg.momentum,
        "batch": cfg.batch_size,
        "seed": cfg.seed,
        "precision": cfg.precision,
    }
    print("config " + json.dumps(resolved, sort_keys=True))
    split = dataset.split
    store, rows = train_network(
        spec, dataset.images, dataset.masks,
        np.array(split.train), np.array(split.val), cfg,
        log=lambda msg: print(msg, flush=True),
    )
    if args.loss_csv:
        write_text_atomic(args.loss_csv, loss_csv_text(rows))
        print(f"wrote {args.loss_csv}")
    save_checkpoint(args.output, store)
    print(f"wrote {args.output}")
    return 0


def cmd_eval(args):
    spec = _as_merged(_load_network(args.network))
    dataset = _load_dataset(args.data)
    try:
        store = load_checkpoint(args.checkpoint, spec)
    except CheckpointMismatchError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from None
    except (OSError, CheckpointError) as exc:
        raise CliError(f"cannot load checkpoint {args.checkpoint}: {exc}", EXIT_INPUT) from None
    reports = []
    for i in dataset.split.test:
        x = dataset.images[i][None, None, :, :].astype(store.dtype)
        pred, _ = run_forward(spec, store, x, mode="eval")
        counts = metrics_mod.confusion_from_masks(pred[0, 0], dataset.masks[i], args.threshold)
        reports.append(metrics_mod.compute_metrics(counts))
    agg = metrics_mod.aggregate_report(reports)
    write_text_atomic(args.output, metrics_mod.report_csv_text(agg))
    print(f"wrote {args.output} ({len(reports)} test images)")
    if args.per_image:
        write_text_atomic(args.per_image, metrics_mod.per_image_csv_text(agg))
        print(f"wrote {args.per_image}")
    for name in ("accuracy", "f1", "mcc"):
        print(f"mean {name}: {agg.means[name]:.6f}")
    return 0


def cmd_graph_dump(args):
    parents = _load_plain_networks(args.inputs)
    composed = parallel_compose([network_to_graph(p) for p in parents])
    contracted = contract(composed)
    print("# stage: parallel")
    print(dump_graph(composed), end="")
    print("# stage: contracted")
    print(dump_graph(contracted), end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spdnn",
        description="Merge network architectures by labeled-graph contraction; "
        "train and evaluate the result on synthetic segmentation data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge architecture files into one network")
    p.add_argument("inputs", nargs="+", metavar="NET")
    p.add_argument("--tolerance", type=float, default=0.10,
                   help="parameter parity tolerance (default 0.10)")
    p.add_argument("--target-params", type=int, default=0,
                   help="parameter target; 0 means the mean of the parents (default 0)")
    p.add_argument("--merge-kernel", type=int, default=1,
                   help="output-merge convolution kernel size (default 1)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("params", help="print parameter counts of network files")
    p.add_argument("inputs", nargs="+", metavar="NET")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gen-data", help="generate a synthetic ring-segmentation dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network on a dataset")
    p.add_argument("network", metavar="NET")
    p.add_argument("data", metavar="DATA")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("--loss-csv", default=None)
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("checkpoint", metavar="CKPT")
    p.add_argument("network", metavar="NET")
    p.add_argument("data", metavar="DATA")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--per-image", default=None, help="also write per-image metrics CSV")
    p.add_argument("-o", "--output", required=True, help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("graph-dump", help="dump the parallel and contracted graphs")
    p.add_argument("inputs", nargs="+", metavar="NET")
    p.set_defaults(func=cmd_graph_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InfeasibleParityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
