"""Command-line entry point: ``generate``, ``train``, ``predict``, ``eval``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import load_config
from .data import SpriteConfig, generate_dataset, read_sequences, write_sequences
from .errors import ConfigError, IleError
from .metrics import evaluate
from .model import AdamState, IleConfig, IleModel, LossBreakdown, fit, predict_frames

log = logging.getLogger("ile")

TRACE_HEADER = "step,predictive,logdet_term,scale_term,total,gamma,spectral_radius\n"


def _merge_checkpoint_config(file_cfg: dict[str, str], ck_cfg: dict[str, str]) -> dict[str, str]:
    """Checkpoint values win over the config file; conflicts are logged."""
    merged = dict(file_cfg)
    for key, value in ck_cfg.items():
        if key in file_cfg and file_cfg[key] != value:
            log.warning("config key '%s': checkpoint value %s overrides file value %s", key, value, file_cfg[key])
        merged[key] = value
    return merged


def _load_data(path, cfg: IleConfig) -> np.ndarray:
    (T, H, W), frames = read_sequences(path)
    if (H, W) != (cfg.height, cfg.width):
        raise ConfigError(f"data frames are {H}x{W} but config expects {cfg.height}x{cfg.width}")
    return frames


def _model_config(mapping: dict[str, str]) -> dict[str, object]:
    cfg = IleConfig.from_mapping(mapping)
    full = dict(mapping)
    full.update({k: v for k, v in cfg.to_mapping().items()})
    return full


def cmd_generate(args) -> int:
    mapping = load_config(args.config)
    cfg = SpriteConfig.from_mapping(mapping, split=args.split)
    seqs = generate_dataset(cfg)
    write_sequences(args.out, seqs, dims=(cfg.seq_len, cfg.height, cfg.width))
    print(f"wrote {cfg.count} sequences of {cfg.seq_len} frames, {cfg.height}x{cfg.width} to {args.out}")
    return 0


def _fmt_breakdown(bd: LossBreakdown) -> str:
    return (
        f"predictive={bd.predictive:.6g} logdet_term={bd.logdet_term:.6g} "
        f"scale_term={bd.scale_term:.6g} total={bd.total:.6g} gamma={bd.gamma:.6g}"
    )


def cmd_train(args) -> int:
    mapping = load_config(args.config)
    if args.ckpt:
        ck_map, arrays = ckpt.load_checkpoint(args.ckpt)
        mapping = _merge_checkpoint_config(mapping, ck_map)
        cfg = IleConfig.from_mapping(mapping)
        model, opt = ckpt.restore_state(cfg, arrays)
        log.info("resumed from %s at step %d", args.ckpt, opt.step)
    else:
        cfg = IleConfig.from_mapping(mapping)
        model = IleModel.init(cfg)
        opt = AdamState.init(model)
    frames = _load_data(args.data, cfg)
    N, T = frames.shape[:2]
    if T != cfg.seq_len:
        raise ConfigError(f"data sequences have {T} frames but seq.len is {cfg.seq_len}")
    if N == 0:
        raise ConfigError("training data is empty")
    steps = cfg.steps if args.steps is None else args.steps

    trace_path = Path(args.trace) if args.trace else Path(str(args.ckpt_out) + ".trace.csv")
    last: list[LossBreakdown] = []
    with open(trace_path, "w") as trace:
        trace.write(TRACE_HEADER)

        def on_step(step: int, bd: LossBreakdown, radius: float) -> None:
            vals = (bd.predictive, bd.logdet_term, bd.scale_term, bd.total, bd.gamma, radius)
            trace.write(f"{step}," + ",".join(repr(float(v)) for v in vals) + "\n")
            last[:] = [bd]

        model, opt = fit(model, opt, frames.reshape(N, T, -1), cfg, steps, on_step)

    ckpt.save_checkpoint(args.ckpt_out, _model_config(mapping), ckpt.state_arrays(model, opt))
    if last:
        print(f"step {opt.step}: {_fmt_breakdown(last[0])}")
    else:
        print(f"step {opt.step}: no training steps run")
    return 0


def _load_for_inference(args) -> tuple[IleConfig, IleModel, np.ndarray]:
    mapping = load_config(args.config) if args.config else {}
    ck_map, arrays = ckpt.load_checkpoint(args.ckpt)
    cfg = IleConfig.from_mapping(_merge_checkpoint_config(mapping, ck_map))
    model, _ = ckpt.restore_state(cfg, arrays)
    frames = _load_data(args.data, cfg)
    return cfg, model, frames


def write_pgm(path, frame: np.ndarray) -> None:
    """Binary graymap, maxval 255, intensities rounded from [0, 1]."""
    img = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def cmd_predict(args) -> int:
    cfg, model, frames = _load_for_inference(args)
    k = cfg.cond_len if args.k is None else args.k
    m = args.horizon
    N, T, H, W = frames.shape
    if k < 1 or m < 1 or k + m > T:
        raise ConfigError(f"k + horizon = {k + m} exceeds sequence length {T}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flat = frames.reshape(N, T, -1)
    pred = predict_frames(model, flat[:, :k], m, cfg).reshape(N, m, H, W)
    for i in range(N):
        for j in range(m):
            t = k + j
            write_pgm(out / f"seq{i}_t{t}_pred.pgm", pred[i, j])
            write_pgm(out / f"seq{i}_t{t}_true.pgm", frames[i, t])
    print(f"wrote {2 * N * m} frames to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg, model, frames = _load_for_inference(args)
    k = cfg.cond_len if args.k is None else args.k
    report = evaluate(model, frames, k, args.horizon, cfg)
    report.write(args.report)
    rows = report.rows()
    print("horizon,model_psnr,model_ssim,baseline_psnr,baseline_ssim")
    for row in (rows[0], rows[-1]) if len(rows) > 1 else rows:
        print(",".join([str(row[0])] + [f"{v:.4f}" for v in row[1:]]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ile", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a bouncing-sprite dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "test"), default="train",
                   help="read data.count/data.seed or test.count/test.seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train or resume a model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-out", required=True)
    p.add_argument("--ckpt", help="checkpoint to resume from")
    p.add_argument("--steps", type=int, help="steps to run (default: config 'steps')")
    p.add_argument("--trace", help="loss trace CSV (default: <ckpt-out>.trace.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="export predicted and true frames as PGM")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="PSNR/SSIM report against the last-input baseline")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (IleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

