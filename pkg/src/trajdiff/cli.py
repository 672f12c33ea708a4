"""``trajdiff train | sample | eval | sweep``.

Every command reads one JSON config; outputs go to ``--out`` (default: the
config's ``out_dir``) and depend only on config, checkpoint and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_datasets
from .data import (CheckpointError, DataFormatError, TrajectoryWindow, load_checkpoint,
                   save_checkpoint, stack_windows)
from .estimator import MotionDiffusion
from .evaluation import (CLOUD_COLUMNS, CURVE_COLUMNS, MIN_K, evaluate, export_step_clouds,
                         trace_curves)
from .training import TrainingError

log = logging.getLogger("trajdiff")

PREDICTION_COLUMNS = ("window", "sample", "t", "x", "y")


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _scene_arrays(windows: list[TrajectoryWindow]):
    if not windows:
        raise ConfigError("the test split contains no windows")
    X, Y, origins = stack_windows(windows)
    return X + origins[:, None], Y + origins[:, None]


def _setup(args) -> tuple[RunConfig, Path]:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _load_estimator(path) -> MotionDiffusion:
    return MotionDiffusion.from_checkpoint(load_checkpoint(path))


def cmd_train(args) -> int:
    cfg, out = _setup(args)
    train, _ = build_datasets(cfg)
    if len(train) < cfg.batch_size:
        raise ConfigError(f"training split has {len(train)} windows, fewer than one batch")
    X, Y = _scene_arrays(train)
    est = MotionDiffusion(**cfg.estimator_params())

    def sink(step, model):
        if step != cfg.steps:
            save_checkpoint(model.to_checkpoint(), out / f"checkpoint_step{step}.ckpt")

    est.fit(X, Y, checkpoint_sink=sink, checkpoint_every=cfg.checkpoint_every)
    save_checkpoint(est.to_checkpoint(), out / "checkpoint.ckpt")
    write_csv(out / "train_log.csv", ("step", "loss", "wall_ms"),
              [(s, loss, round(ms, 3)) for s, loss, ms in est.log_rows_])
    print(f"trained {cfg.steps} steps on {len(train)} windows -> {out / 'checkpoint.ckpt'}")
    return 0


def _sample_test(cfg: RunConfig, checkpoint, n_samples: int):
    est = _load_estimator(checkpoint)
    _, test = build_datasets(cfg)
    X, Y = _scene_arrays(test)
    return est, X, Y, est.sample(X, n_samples=n_samples, seed=cfg.seed)


def cmd_sample(args) -> int:
    cfg, out = _setup(args)
    n = args.n_samples or cfg.n_samples
    _, _, _, samples = _sample_test(cfg, args.checkpoint, n)
    rows = ((w, s, t, px, py) for w, block in enumerate(samples)
            for s, path in enumerate(block) for t, (px, py) in enumerate(path))
    write_csv(out / "predictions.csv", PREDICTION_COLUMNS, rows)
    print(f"wrote {samples.shape[0] * samples.shape[1] * samples.shape[2]} rows "
          f"-> {out / 'predictions.csv'}")
    return 0


def read_predictions(path, n_windows: int, T_pred: int) -> np.ndarray:
    """Load a predictions CSV back into (windows, samples, T_pred, 2)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 5:
        raise DataFormatError(f"{path}: expected columns {','.join(PREDICTION_COLUMNS)}")
    w, s, t = (data[:, i].astype(np.int64) for i in range(3))
    n = int(s.max()) + 1 if len(s) else 0
    if len(data) != n_windows * n * T_pred or int(w.max(initial=-1)) + 1 != n_windows:
        raise DataFormatError(f"{path}: rows do not cover {n_windows} windows x {n} samples "
                              f"x {T_pred} steps")
    out = np.full((n_windows, n, T_pred, 2), np.nan)
    out[w, s, t] = data[:, 3:]
    return out


def cmd_eval(args) -> int:
    cfg, out = _setup(args)
    n = args.n_samples or cfg.n_samples
    if args.predictions:
        _, test = build_datasets(cfg)
        _, Y = _scene_arrays(test)
        samples = read_predictions(args.predictions, len(Y), cfg.T_pred)
    elif args.checkpoint:
        _, _, Y, samples = _sample_test(cfg, args.checkpoint, n)
    else:
        raise ConfigError("eval needs --checkpoint or --predictions")
    report = evaluate(samples, Y)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    header = ["window", "ade", "fde"] + [f"min{k}_ade" for k in MIN_K] + ["diversity"]
    rows = []
    for w, (block, gt) in enumerate(zip(samples, Y)):
        per = evaluate(block[None], gt[None])
        rows.append([w, per.ade, per.fde]
                    + [per.min_k.get(k, (per.ade, per.fde))[0] for k in MIN_K] + [per.diversity])
    write_csv(out / "metrics.csv", header, rows)
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "curves"}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg, out = _setup(args)
    n = args.n_samples or cfg.n_samples
    est = _load_estimator(args.checkpoint)
    _, test = build_datasets(cfg)
    X, Y = _scene_arrays(test)
    _, trace = est.sample(X, n_samples=n, seed=cfg.seed, keep_trace=True)
    # distances are translation invariant, so scene-frame traces score directly
    curves = trace_curves(trace, Y)
    write_csv(out / "tradeoff.csv", CURVE_COLUMNS, ([r[c] for c in CURVE_COLUMNS] for r in curves))
    w = min(cfg.sweep_window, len(X) - 1)
    write_csv(out / "clouds.csv", CLOUD_COLUMNS, export_step_clouds(trace[:, w], cfg.sweep_stride))
    print(f"wrote {len(curves)} curve rows -> {out / 'tradeoff.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint: bool):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", help="output directory (default: config out_dir)")
        p.add_argument("--seed", type=int, help="override the config's master seed")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint written by train")
            p.add_argument("--n-samples", type=int, dest="n_samples",
                           help="samples per window (default: config n_samples)")
        return p

    common(sub.add_parser("train", help="fit the model, write checkpoints and a loss log"),
           False).set_defaults(func=cmd_train)
    common(sub.add_parser("sample", help="write sampled futures for the test split"),
           True).set_defaults(func=cmd_sample)
    p = common(sub.add_parser("eval", help="best-of-N / min-k / diversity report"), True)
    p.add_argument("--predictions", help="evaluate an existing predictions CSV instead")
    p.set_defaults(func=cmd_eval)
    common(sub.add_parser("sweep", help="per-reverse-step trade-off curves and sample clouds"),
           True).set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    if args.command in ("sample", "sweep") and not args.checkpoint:
        parser.error(f"{args.command} requires --checkpoint")
    if getattr(args, "n_samples", None) is not None and args.n_samples < 1:
        parser.error("--n-samples must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, TrainingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
