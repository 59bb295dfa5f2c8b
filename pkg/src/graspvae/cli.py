"""``graspvae`` command line.

Every subcommand accepts ``--config FILE.json`` whose keys are flag names
(dashes or underscores); explicit flags win over the file. Errors are one
JSON line on stderr, ``{"error": <kind>, "message": ...}``, with a distinct
exit code per kind (see :mod:`graspvae.errors`).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dim_estimator, eval_harness, grasp_data, hgg_vae, latent_explorer
from .errors import FormatError, GraspVAEError, PathError, UsageError

log = logging.getLogger("graspvae")


def _floats(text):
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a u64")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="graspvae", description="Grasp-space VAE toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="JSON file of flag values (flags take precedence)")
        p.add_argument("--seed", type=_seed, default=0, help="RNG seed (u64, default 0)")
        return p

    def task_flag(p):
        p.add_argument("--task", type=Path, help="task definition JSON (default: built-in cylinder task)")

    p = command("gen-data", "Sample a primitive grasp dataset from the synthetic task.")
    task_flag(p)
    p.add_argument("--out", type=Path, required=True, help="output JSON Lines dataset")
    p.add_argument("--per-pose-count", type=_ints, default=(75,),
                   help="records per stable pose: one number, or one per pose (default 75)")
    p.add_argument("--csv", type=Path, help="also write a 13-column CSV copy")

    p = command("train", "Train a model on a dataset.")
    p.add_argument("--data", type=Path, required=True, help="JSON Lines dataset")
    p.add_argument("--out", type=Path, required=True, help="output model JSON")
    p.add_argument("--latent-dim", type=_positive_int, default=3, help="latent variables (default 3)")
    p.add_argument("--kl-coeff", type=float, default=0.0005, help="KL coefficient beta (default 0.0005)")
    p.add_argument("--epochs", type=int, default=2000, help="training epochs (default 2000)")
    p.add_argument("--batch-size", type=_positive_int, default=16, help="batch size (default 16)")
    p.add_argument("--learning-rate", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")
    p.add_argument("--input-head-widths", type=_ints, default=(16, 16), help="input head widths (default 16,16)")
    p.add_argument("--main-widths", type=_ints, default=(112, 64), help="main encoder widths (default 112,64)")
    p.add_argument("--output-head-widths", type=_ints, default=(16,), help="output head hidden widths (default 16)")
    p.add_argument("--network-size", type=int, help="target parameter count; rescales --main-widths")
    p.add_argument("--loss-log", type=Path, help="per-epoch loss CSV")

    def plane_flags(p):
        p.add_argument("--plane", type=_floats, help="tabletop plane a,b,c,d")
        p.add_argument("--pose", type=int, help="stable pose index of --task (alternative to --plane)")
        task_flag(p)

    p = command("generate", "Decode prior samples into grasp configurations.")
    p.add_argument("--model", type=Path, required=True, help="trained model JSON")
    plane_flags(p)
    p.add_argument("--count", type=int, default=100, help="number of samples (default 100)")
    p.add_argument("--out", type=Path, required=True, help="output JSON Lines")
    p.add_argument("--csv", type=Path, help="also write latent + configuration CSV")

    p = command("sweep-latent", "Decode points on circles around a latent center.")
    p.add_argument("--model", type=Path, required=True, help="trained model JSON")
    plane_flags(p)
    p.add_argument("--diameters", type=_floats, default=(0.5, 1.0), help="circle diameters (default 0.5,1.0)")
    p.add_argument("--points", type=_positive_int, default=8, help="points per circle (default 8)")
    p.add_argument("--axes", type=_ints, default=(0, 1), help="two latent axes to sweep (default 0,1)")
    p.add_argument("--center", type=_floats, help="latent center (default origin)")
    p.add_argument("--out", type=Path, required=True, help="output JSON Lines")
    p.add_argument("--csv", type=Path, help="also write latent + configuration CSV")

    p = command("estimate-dim", "Kernel-PCA estimate of the grasp-space dimension.")
    p.add_argument("--data", type=Path, required=True, help="JSON Lines dataset")
    p.add_argument("--kernel", choices=("rbf", "linear"), default="rbf", help="kernel (default rbf)")
    p.add_argument("--gamma", default=dim_estimator.INVERSE_FEATURES,
                   help="rbf gamma: a number, 'inverse-features' (default) or 'median-heuristic'")
    p.add_argument("--threshold", type=float, default=0.9, help="information fraction (default 0.9)")
    p.add_argument("--solver", choices=("jacobi", "lapack"), default="jacobi", help="eigensolver")
    p.add_argument("--json", type=Path, help="write the full report as JSON")

    p = command("eval", "Reconstruction errors and prior-sample success share.")
    p.add_argument("--model", type=Path, required=True, help="trained model JSON")
    p.add_argument("--data", type=Path, required=True, help="training dataset (JSON Lines)")
    task_flag(p)
    p.add_argument("--samples", type=int, default=1000, help="prior samples for the success share")
    p.add_argument("--json", type=Path, help="write metrics as JSON")

    p = command("hp-sweep", "Hyperparameter grid with Spearman correlation table.")
    task_flag(p)
    p.add_argument("--network-sizes", type=_ints, default=(12000, 30000), help="parameter counts")
    p.add_argument("--latent-dims", type=_ints, default=(2, 6), help="latent dimensions")
    p.add_argument("--kl-coeffs", type=_floats, default=(0.0002, 0.01), help="KL coefficients")
    p.add_argument("--seeds", type=_ints, default=(0,), help="training seeds per grid point")
    p.add_argument("--per-pose-count", type=_positive_int, default=75, help="records per stable pose")
    p.add_argument("--epochs", type=int, default=2000, help="epochs per run")
    p.add_argument("--samples", type=int, default=1000, help="prior samples per run")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    p.add_argument("--out-csv", type=Path, required=True, help="SweepRecord CSV")
    p.add_argument("--out-table", type=Path, required=True, help="correlation table JSON")
    return parser


def _apply_config(parser, argv):
    """Parse ``argv`` with ``--config`` values installed as subparser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    if known.config is None or known.command not in subparsers:
        return parser.parse_args(argv)
    if not known.config.is_file():
        raise PathError(f"config file not found: {known.config}")
    try:
        values = json.loads(known.config.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, line=exc.lineno) from None
    if not isinstance(values, dict):
        raise FormatError("config file must hold a JSON object")
    subparser = subparsers[known.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {known.command}")
        action = actions[dest]
        if action.type is not None and not isinstance(value, str):
            value = ",".join(str(v) for v in value) if isinstance(value, list) else str(value)
        defaults[dest] = action.type(value) if action.type is not None else value
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _need_file(path, what):
    if path is not None and not Path(path).is_file():
        raise PathError(f"{what} not found: {path}")


def _need_parent(path):
    if path is not None and not Path(path).resolve().parent.is_dir():
        raise PathError(f"output directory does not exist: {Path(path).parent}")


def _task(args):
    _need_file(args.task, "task file")
    return eval_harness.load_task(args.task) if args.task else eval_harness.SyntheticGraspTask()


def _plane(args):
    if args.plane is not None:
        if len(args.plane) != 4:
            raise UsageError("--plane needs four numbers a,b,c,d")
        return grasp_data.TabletopPlane(*args.plane)
    task = _task(args)
    index = 0 if args.pose is None else args.pose
    if not 0 <= index < len(task.stable_poses):
        raise UsageError(f"--pose {index} out of range (task has {len(task.stable_poses)} poses)")
    return task.stable_poses[index]


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def cmd_gen_data(args):
    task = _task(args)
    _need_parent(args.out)
    _need_parent(args.csv)
    counts = args.per_pose_count[0] if len(args.per_pose_count) == 1 else args.per_pose_count
    dataset = eval_harness.generate_primitives(task, counts, np.random.default_rng(args.seed))
    grasp_data.save_dataset(dataset, args.out)
    if args.csv:
        grasp_data.export_csv(dataset, args.csv)
    print(f"wrote {len(dataset)} records to {args.out}")


def cmd_train(args):
    _need_file(args.data, "dataset")
    _need_parent(args.out)
    _need_parent(args.loss_log)
    dataset = grasp_data.load_dataset(args.data)
    arch = hgg_vae.HggArchitecture(args.latent_dim, args.input_head_widths, args.main_widths,
                                   args.output_head_widths)
    if args.network_size is not None:
        arch = hgg_vae.architecture_for_size(args.network_size, args.latent_dim, arch)
    config = hgg_vae.TrainingConfig(args.kl_coeff, args.epochs, args.batch_size, args.learning_rate, args.seed)
    model = hgg_vae.build_hgg(arch, seed=args.seed)

    def progress(epoch, report):
        if epoch % 100 == 0 or epoch == config.epochs:
            log.info("epoch %d total %.6g recon %.6g kl %.6g", epoch, report.total[-1],
                     report.reconstruction[-1], report.kl[-1])

    model, report = hgg_vae.train(model, dataset, config, progress=progress)
    hgg_vae.save_model(model, args.out)
    if args.loss_log:
        report.write_csv(args.loss_log)
    kl = ", ".join(f"{v:.4g}" for v in report.kl_per_variable)
    print(f"parameters {model.parameter_count}; final loss {report.total[-1]:.6g}; "
          f"per-variable KL [{kl}]; used latent variables {report.used_latent_variables}")


def cmd_generate(args):
    _need_file(args.model, "model")
    _need_parent(args.out)
    _need_parent(args.csv)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    model = hgg_vae.load_model(args.model)
    plane = _plane(args)
    z, configs = latent_explorer.sample_prior_with_latents(model, plane, args.count,
                                                           np.random.default_rng(args.seed))
    pairs = list(zip(z, configs))
    latent_explorer.write_jsonl(args.out, pairs, plane)
    if args.csv:
        latent_explorer.write_csv(args.csv, pairs)
    print(f"wrote {len(pairs)} configurations to {args.out}")


def cmd_sweep_latent(args):
    _need_file(args.model, "model")
    _need_parent(args.out)
    _need_parent(args.csv)
    model = hgg_vae.load_model(args.model)
    plan = latent_explorer.SweepPlan(_plane(args), args.center, args.diameters, args.points, args.axes)
    pairs = latent_explorer.sweep(model, plan)
    latent_explorer.write_jsonl(args.out, pairs, plan.plane)
    if args.csv:
        latent_explorer.write_csv(args.csv, pairs)
    print(f"wrote {len(pairs)} configurations to {args.out}")


def cmd_estimate_dim(args):
    _need_file(args.data, "dataset")
    _need_parent(args.json)
    dataset = grasp_data.load_dataset(args.data)
    gamma = args.gamma
    if gamma not in (dim_estimator.MEDIAN_HEURISTIC, dim_estimator.INVERSE_FEATURES):
        try:
            gamma = float(gamma)
        except ValueError:
            raise UsageError(f"bad --gamma {gamma!r}") from None
    config = dim_estimator.KpcaConfig(args.kernel, gamma, args.threshold, args.solver)
    report = dim_estimator.estimate_dimension(dataset.normalized()[:, 0:8], config)
    print(f"{'k':>4} {'eigenvalue':>14} {'cumulative':>10}")
    shown = max(report.dimension + 2, 8)
    for k, (lam, frac) in enumerate(zip(report.eigenvalues[:shown], report.cumulative[:shown]), start=1):
        print(f"{k:>4} {lam:>14.6g} {frac:>10.4f}")
    print(f"estimated dimension: {report.dimension} (threshold {report.threshold:g})")
    if args.json:
        _dump(args.json, report.to_dict())


def cmd_eval(args):
    _need_file(args.model, "model")
    _need_file(args.data, "dataset")
    _need_parent(args.json)
    model = hgg_vae.load_model(args.model)
    dataset = grasp_data.load_dataset(args.data)
    task = _task(args)
    m = eval_harness.evaluate_model(model, task, dataset, n_samples=args.samples,
                                    rng=np.random.default_rng(args.seed))
    print(f"mean position error (m): {m.position_error:.6f}")
    print(f"mean orientation error (deg): {m.orientation_error:.4f}")
    print(f"generated successful grasps share (%): {m.success_percent:.1f}")
    if args.json:
        _dump(args.json, {"position_error_m": m.position_error, "orientation_error_deg": m.orientation_error,
                          "success_share": m.success_share})


def cmd_hp_sweep(args):
    task = _task(args)
    _need_parent(args.out_csv)
    _need_parent(args.out_table)
    grid = {"network_size": list(args.network_sizes), "latent_dim": list(args.latent_dims),
            "kl_coefficient": list(args.kl_coeffs)}
    base = hgg_vae.TrainingConfig(epochs=args.epochs)
    result = eval_harness.run_sweep(task, grid, seeds=args.seeds, per_pose_count=args.per_pose_count,
                                    data_seed=args.seed, base_config=base, n_samples=args.samples,
                                    jobs=args.jobs)
    result.write_csv(args.out_csv)
    result.write_table(args.out_table)
    cols = eval_harness.HYPERPARAMETERS
    print(f"{'':<24}" + "".join(f"{c:>16}" for c in cols))
    for ind, row in result.table.items():
        cells = "".join(f"{'n/a':>16}" if row[c] is None else f"{row[c]:>16.2f}" for c in cols)
        print(f"{ind:<24}{cells}")
    if result.failures:
        print(f"{len(result.failures)} run(s) failed; see {args.out_table}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "sweep-latent": cmd_sweep_latent,
    "estimate-dim": cmd_estimate_dim,
    "eval": cmd_eval,
    "hp-sweep": cmd_hp_sweep,
}


def run(argv=None) -> int:
    level = os.environ.get("GRASPVAE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse: --help (0) or bad usage (2)
        return int(exc.code or 0)
    except GraspVAEError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "io-error", "message": str(exc)}), file=sys.stderr)
        return 7
    return 0


def main():
    sys.exit(run())
