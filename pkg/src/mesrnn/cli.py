"""Command-line entry point.

Subcommands: train, eval, predict, synth, verify. Exit codes are fixed
for scripting: 0 success, 1 verification failure, 2 usage error, 3 data
error, 4 numeric failure during training. Every run that writes outputs
also writes a JSON manifest with the resolved configuration and input
digests; pass --manifest to rerun from one.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .data import (
    load_table,
    parse_synth_spec,
    save_table,
    scenes_to_table,
    synth_generate,
    window_scenes,
)
from .errors import (
    CheckpointError,
    ContractError,
    DataFormatError,
    MesrnnError,
    NumericError,
    PresenceError,
)
from .evaluate import (
    evaluate_scenes,
    export,
    leave_one_out,
    score_results,
    write_metrics_csv,
)
from .model import VARIANTS, load_checkpoint, save_checkpoint
from .stgraph import Scene
from .training import TrainConfig, train, write_history
from .verify import format_rows, run_all

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mesrnn",
        description="Meta-path enhanced structural RNN trajectory toolkit",
    )
    parser.add_argument("--version", action="version", version=f"mesrnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value file applied as flag defaults")
        p.add_argument("--manifest", help="rerun with the config of a previous manifest")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model on dataset files or a synthetic spec")
    common(p)
    p.add_argument("--data", help="directory of dataset .txt files")
    p.add_argument("--synth", help="inline synthetic spec, e.g. crossing:n=4,scenes=50")
    p.add_argument("--model", choices=VARIANTS, default="mesrnn")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--clip", type=float, default=10.0)
    p.add_argument("--obs", type=int, default=8)
    p.add_argument("--pred", type=int, default=12)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--loss-window", choices=("pred", "full"), default="pred")
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--out", required=True, help="checkpoint output path")

    p = sub.add_parser("eval", help="evaluate a checkpoint or run leave-one-out")
    common(p)
    p.add_argument("--ckpt", help="checkpoint to evaluate")
    p.add_argument("--data", required=True, help="dataset dir (or dir of split subdirs with --loo)")
    p.add_argument("--loo", action="store_true", help="leave-one-out over split subdirectories")
    p.add_argument("--model", choices=VARIANTS, default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--clip", type=float, default=10.0)
    p.add_argument("--obs", type=int, default=8)
    p.add_argument("--pred", type=int, default=12)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--loss-window", choices=("pred", "full"), default="pred")
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory for metrics files")

    p = sub.add_parser("predict", help="roll out a checkpoint on a scene file")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True, help="dataset file with the observed frames")
    p.add_argument("--obs", type=int, default=8)
    p.add_argument("--pred", type=int, default=12)
    p.add_argument("--format", choices=("csv", "json", "svg"), default="csv")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset file")
    common(p)
    p.add_argument("--spec", required=True, help="inline spec, e.g. overtaking:n=2,scenes=20")
    p.add_argument("--out", required=True, help="dataset file to write")

    p = sub.add_parser("verify", help="run gradient and oracle verification checks")
    common(p)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--fd-step", type=float, default=1e-6)
    p.add_argument("--samples", type=int, default=8, help="probed entries per tensor")
    p.add_argument("--scenes", type=int, default=100, help="random scenes for the oracle suite")
    return parser


def _apply_config_files(parser, argv):
    """Pre-scan --config / --manifest and install their values as defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("--manifest")
    known, _ = pre.parse_known_args(argv)
    defaults = {}
    if known.manifest:
        with open(known.manifest, "r", encoding="utf-8") as fh:
            defaults.update(json.load(fh).get("config", {}))
    if known.config:
        with open(known.config, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, eq, value = line.partition("=")
                if not eq:
                    raise DataFormatError(f"{known.config}:{lineno}: expected key=value")
                defaults[key.strip().replace("-", "_")] = value.strip()
    if defaults:
        for action in parser._subparsers._group_actions[0].choices.values():
            action.set_defaults(**{
                k: v for k, v in defaults.items()
                if any(a.dest == k for a in action._actions)
            })
    return defaults


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command, args, input_paths, skip=("config", "manifest")):
    config = {
        k: v for k, v in vars(args).items()
        if k not in ("command",) + tuple(skip) and v is not None
    }
    payload = {
        "tool": "mesrnn",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {os.path.abspath(p): _sha256(p) for p in sorted(input_paths)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    return path


def _dataset_files(directory):
    files = sorted(glob.glob(os.path.join(directory, "*.txt")))
    if not files:
        raise DataFormatError(f"no .txt dataset files in {directory}")
    return files


def _load_dir_scenes(directory, t_obs, t_pred, stride, mode):
    scenes = []
    files = _dataset_files(directory)
    for path in files:
        scenes.extend(window_scenes(load_table(path), t_obs, t_pred, stride, mode))
    if not scenes:
        raise DataFormatError(f"no usable scenes in {directory}")
    return scenes, files


def _train_config(args):
    return TrainConfig(
        epochs=args.epochs, lr=args.lr, clip=args.clip,
        t_obs=args.obs, t_pred=args.pred, loss_window=args.loss_window,
        dropout=args.dropout, seed=args.seed, val_frac=args.val_frac,
    )


def cmd_train(args):
    if bool(args.data) == bool(args.synth):
        raise UsageError("exactly one of --data or --synth is required")
    inputs = []
    if args.data:
        scenes, inputs = _load_dir_scenes(args.data, args.obs, args.pred, args.stride, "train")
    else:
        scenes = synth_generate(parse_synth_spec(args.synth))
    config = _train_config(args)
    result = train(config, scenes, args.model)
    meta = {"dropout": config.dropout, "seed": config.seed,
            "frame_interval": scenes[0].frame_interval}
    save_checkpoint(result.params, result.norm, meta, args.out)
    write_history(args.out + ".history.csv", result.history)
    write_manifest(args.out + ".manifest.json", "train", args, inputs)
    best = result.best_epoch()
    print(
        f"trained {args.model} on {len(scenes)} scenes for {config.epochs} epochs; "
        f"best epoch {best}; checkpoint {args.out}"
    )
    return EXIT_OK


def cmd_eval(args):
    os.makedirs(args.out, exist_ok=True)
    if args.loo:
        if args.model is None:
            raise UsageError("--loo needs --model")
        split_dirs = sorted(
            d for d in glob.glob(os.path.join(args.data, "*")) if os.path.isdir(d)
        )
        if len(split_dirs) < 2:
            raise DataFormatError(f"--loo needs at least 2 split subdirectories in {args.data}")
        splits = {}
        inputs = []
        for d in split_dirs:
            scenes, files = _load_dir_scenes(d, args.obs, args.pred, args.stride, "infer")
            splits[os.path.basename(d)] = scenes
            inputs += files
        rows, _ = leave_one_out(splits, _train_config(args), args.model, args.workers)
    else:
        if not args.ckpt:
            raise UsageError("eval needs --ckpt (or --loo)")
        params, norm, _meta = load_checkpoint(args.ckpt, expect_variant=args.model)
        scenes, inputs = _load_dir_scenes(args.data, args.obs, args.pred, args.stride, "infer")
        inputs = [args.ckpt] + inputs
        results = evaluate_scenes(params, scenes, norm, args.obs, args.pred, args.workers)
        row = score_results(results, os.path.basename(args.data.rstrip("/")),
                            params.variant, args.seed)
        rows = [row]
    write_metrics_csv(rows, os.path.join(args.out, "metrics.csv"))
    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump([vars(r) for r in rows], fh, indent=1)
    write_manifest(os.path.join(args.out, "manifest.json"), "eval", args, inputs)
    for r in rows:
        print(
            f"{r.split:<16} {r.variant:<8} ade_norm={r.ade_norm:.6g} "
            f"fde_norm={r.fde_norm:.6g} scenes={r.n_scenes} peds={r.n_peds}"
        )
    return EXIT_OK


def scene_for_prediction(table, t_obs, t_pred):
    """First t_obs frames observed; later frames absent unless recorded."""
    ticks = np.unique(table.frames)
    if len(ticks) < t_obs:
        raise DataFormatError(
            f"scene file has {len(ticks)} frames, need at least {t_obs} observed"
        )
    total = t_obs + t_pred
    col = {int(f): i for i, f in enumerate(ticks[:total])}
    by_ped = {}
    for k in range(table.n_records):
        frame = int(table.frames[k])
        if frame in col:
            by_ped.setdefault(int(table.peds[k]), {})[col[frame]] = table.xy[k]
    keep = sorted(
        ped for ped, cols in by_ped.items() if all(c in cols for c in range(t_obs))
    )
    if not keep:
        raise DataFormatError("no pedestrian present through the observed period")
    positions = np.full((len(keep), total, 2), np.nan)
    presence = np.zeros((len(keep), total), dtype=bool)
    for r, ped in enumerate(keep):
        for c, xy in by_ped[ped].items():
            positions[r, c] = xy
            presence[r, c] = True
    return Scene(table.frame_interval, keep, positions, presence, int(ticks[0]))


def cmd_predict(args):
    params, norm, _meta = load_checkpoint(args.ckpt)
    table = load_table(args.scene)
    scene = scene_for_prediction(table, args.obs, args.pred)
    results = evaluate_scenes(params, [scene], norm, args.obs, args.pred)
    rows = [score_results(results, os.path.basename(args.scene), params.variant, args.seed)]
    files = export(results, rows, args.format, args.out)
    write_manifest(os.path.join(args.out, "manifest.json"), "predict", args,
                   [args.ckpt, args.scene])
    print(f"predicted {len(results)} scene(s) -> {', '.join(files)}")
    return EXIT_OK


def cmd_synth(args):
    spec = parse_synth_spec(args.spec)
    scenes = synth_generate(spec)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    save_table(scenes_to_table(scenes), args.out)
    write_manifest(args.out + ".manifest.json", "synth", args, [])
    print(f"wrote {len(scenes)} scenes ({spec.scenario}) to {args.out}")
    return EXIT_OK


def cmd_verify(args):
    rows, ok = run_all(
        tol=args.tol, h=args.fd_step, seed=args.seed,
        samples=args.samples, n_scenes=args.scenes,
    )
    print(format_rows(rows))
    print("verify: PASS" if ok else "verify: FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


class UsageError(MesrnnError):
    pass


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "synth": cmd_synth,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_files(parser, argv)
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse help/usage paths
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CheckpointError, PresenceError, ContractError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
