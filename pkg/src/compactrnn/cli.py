"""Command-line toolchain: train, eval, count-params, gradcheck, bench, export-dataset.

Exit codes: 0 ok, 1 divergence, 2 config error, 3 gradcheck failure.
"""

import argparse
import csv
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import bench, checkpoint, gradcheck, plotting
from .config import ConfigError, parse_config
from .recurrent_nets import count_parameters
from .tasks import export_dataset, make_task
from .training import DivergenceError, Trainer, evaluate, read_metrics

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG, EXIT_GRADCHECK = 0, 1, 2, 3


def _load(args):
    config = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.model_copy(update={"train": config.train.model_copy(update={"seed": args.seed})})
    return config


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _trainer(config, checkpoint_path=None, resume=False):
    trainer = Trainer(config, make_task(config.task))
    if resume:
        ckpt = checkpoint.load_checkpoint(checkpoint_path)
        checkpoint.restore_into(trainer, ckpt)
    return trainer


def cmd_train(args):
    config = _load(args)
    out = config.output
    metrics_path = args.out or out.metrics
    ckpt_path = args.checkpoint or out.checkpoint
    if args.resume and not ckpt_path:
        raise ConfigError("--resume needs --checkpoint or output.checkpoint")
    trainer = _trainer(config, ckpt_path, args.resume)
    max_steps = config.train.max_steps if args.max_steps is None else args.max_steps
    on_eval = None
    if ckpt_path and out.checkpoint_interval:
        def on_eval(tr):
            if tr.step % out.checkpoint_interval == 0:
                checkpoint.save_checkpoint(ckpt_path, tr)
    if metrics_path and not args.resume:
        Path(metrics_path).unlink(missing_ok=True)
    if metrics_path:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
    try:
        history = trainer.run(max_steps, metrics_path, on_eval)
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    if ckpt_path:
        checkpoint.save_checkpoint(ckpt_path, trainer)
    final = history[-1]
    print(f"step {final.step}  train_ce {final.train_ce:.4f}  heldout_frame_acc {final.heldout_frame_acc:.4f}")
    if metrics_path:
        fig = plotting.plot_training_curve(read_metrics(metrics_path), plotting.figure_path(metrics_path))
        print(f"metrics: {metrics_path}  figure: {fig}")
    return EXIT_OK


def cmd_eval(args):
    config = _load(args)
    ckpt_path = args.checkpoint or config.output.checkpoint
    if ckpt_path:
        trainer = _trainer(config, ckpt_path, resume=True)
    else:
        trainer = Trainer(config, make_task(config.task))
    split = trainer.split
    tc = config.train
    train_ce, train_acc = evaluate(trainer.network, split.train, tc.label_delay)
    held_ce, held_acc = evaluate(trainer.network, split.heldout, tc.label_delay)
    rows = [["train", trainer.step, repr(train_ce), repr(train_acc)],
            ["heldout", trainer.step, repr(held_ce), repr(held_acc)]]
    for split_name, step, ce, acc in rows:
        print(f"{split_name:8s} step {step}  ce {float(ce):.4f}  frame_acc {float(acc):.4f}")
    if args.out:
        _write_csv(args.out, ["split", "step", "cross_entropy", "frame_acc"], rows)
    return EXIT_OK


def count_table(config):
    """(rows, total, dense_total); the baseline drops compression but keeps the layer shapes."""
    rows, total = count_parameters(config.network)
    dense_net = config.network.model_copy(update={"compression": []})
    _, dense_total = count_parameters(dense_net)
    return rows, total, dense_total


def cmd_count_params(args):
    header = ["config", "block", "kind", "shape", "params"]
    out_rows = []
    for path in args.config_paths:
        args.config = path
        config = _load(args)
        rows, total, dense_total = count_table(config)
        name = Path(path).stem
        print(f"== {name}")
        for block, kind, shape, count in rows:
            print(f"  {block:12s} {kind:9s} {'x'.join(map(str, shape)):>9s} {count:>10,}")
            out_rows.append([name, block, kind, "x".join(map(str, shape)), count])
        print(f"  total {total:,}  dense baseline {dense_total:,}  ratio {total / dense_total:.4f}")
        out_rows.append([name, "TOTAL", "", "", total])
        out_rows.append([name, "DENSE_BASELINE", "", "", dense_total])
        if args.out:
            fig_path = Path(args.out).with_name(f"{Path(args.out).stem}_{name}.png")
            plotting.plot_param_counts(rows, total, dense_total, fig_path, title=name)
    if args.out:
        _write_csv(args.out, header, out_rows)
    return EXIT_OK


def cmd_gradcheck(args):
    config = _load(args)
    try:
        results = gradcheck.gradcheck_config(config, corrupt=args.corrupt)
    except gradcheck.BudgetExceeded as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    rows = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"  {r.group:16s} n={r.count:5d}  max_rel_err {r.max_rel_error:.3e}  {status}")
        rows.append([r.group, r.count, repr(r.max_rel_error), status])
    if args.out:
        _write_csv(args.out, ["group", "count", "max_rel_error", "status"], rows)
    failed = [r.group for r in results if not r.passed]
    if failed:
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    print(f"gradcheck passed (tolerance {gradcheck.TOLERANCE:g})")
    return EXIT_OK


def cmd_bench(args):
    rows = bench.run_bench(args.sizes, args.ranks, args.repetitions, args.batch)
    for r in rows:
        print(f"  {r['kind']:8s} {r['op']:6s} n={r['n']:<6d} r={str(r['rank']):>3s}  {r['median_s'] * 1e3:10.3f} ms")
    for n in args.sizes:
        for rank in args.ranks:
            print(f"  n={n} r={rank}: dense/toeplitz matvec speedup {bench.speedup(rows, n, rank):.1f}x")
        if 5 in args.ranks and 10 in args.ranks:
            print(f"  n={n}: step time r=10 / r=5 = {bench.rank_ratio(rows, n):.2f}")
    if args.out:
        _write_csv(args.out, bench.BENCH_HEADER, [[r[k] for k in bench.BENCH_HEADER] for r in rows])
        plotting.plot_bench(rows, plotting.figure_path(args.out))
    return EXIT_OK


def cmd_export_dataset(args):
    config = _load(args)
    if not args.out:
        raise ConfigError("export-dataset needs --out PREFIX")
    split = make_task(config.task)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for name, utts in (("train", split.train), ("heldout", split.heldout)):
        path = prefix.with_name(f"{prefix.name}.{name}.bin")
        export_dataset(path, utts, config.task.num_classes)
        print(f"{name}: {len(utts)} utterances -> {path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="compactrnn", description=__doc__.splitlines()[0])
    parser.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                        help="pin BLAS to one thread (default on)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("train", help="train a network")
    common(p, "metrics CSV (overrides output.metrics); a curve figure is written beside it")
    p.add_argument("--checkpoint", help="checkpoint path (overrides output.checkpoint)")
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint")
    p.add_argument("--max-steps", type=int, help="override train.max_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cross-entropy and frame accuracy on both splits")
    common(p, "CSV of the results")
    p.add_argument("--checkpoint", help="evaluate these parameters instead of a fresh init")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count-params", help="per-matrix parameter accounting")
    p.add_argument("config_paths", nargs="*", metavar="CONFIG")
    p.add_argument("--config", action="append", dest="extra_configs", default=[])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV of all rows; one bar chart per config is written beside it")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check of a tiny network")
    common(p, "CSV of per-group errors")
    p.add_argument("--corrupt", metavar="GROUP", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="dense vs Toeplitz-like timings")
    p.add_argument("--sizes", type=int, nargs="+", default=[4096])
    p.add_argument("--ranks", type=int, nargs="+", default=[1, 2, 5, 10])
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--batch", type=int, default=16, help="minibatch for the step timing")
    p.add_argument("--out", help="CSV of timings; a figure is written beside it")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-dataset", help="write the task's train and heldout splits")
    common(p, "path prefix; writes PREFIX.train.bin and PREFIX.heldout.bin")
    p.set_defaults(func=cmd_export_dataset)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "count-params":
        args.config_paths = list(args.config_paths) + args.extra_configs
        if not args.config_paths:
            parser.error("count-params needs at least one config")
    if args.command == "bench" and args.repetitions < 1:
        parser.error("--repetitions must be at least 1")
    limits = threadpool_limits(limits=1) if args.deterministic else nullcontext()
    try:
        with limits:
            return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except checkpoint.CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
