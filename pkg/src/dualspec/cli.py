"""Command-line entry point: ``dualspec <command> ...``.

Exit codes: 0 success, 2 parse or format error, 3 dimension or contract
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import cassi, freq, io, metrics
from .errors import ConfigError, ContractError, DualSpecError, FormatError
from .network import NetConfig, count_params
from .train import LOG_COLUMNS, TrainConfig, reconstruct, train

METRICS = ("psnr", "ssim", "lfd")


def load_run_config(doc: dict) -> tuple[NetConfig, TrainConfig]:
    """Split a flat JSON config into network and training settings.

    Network keys are channels, blocks_pre, blocks_post, groups and in_channels;
    ``lambda`` is accepted for the loss weight. Unknown keys are a format error.
    """
    doc = dict(doc)
    if "lambda" in doc:
        if "lam" in doc:
            raise FormatError("config gives both 'lambda' and 'lam'")
        doc["lam"] = doc.pop("lambda")
    net_doc = {k: doc.pop(k) for k in io.NET_KEYS if k in doc}
    try:
        for key, value in net_doc.items():
            if isinstance(value, bool) or not isinstance(value, int):
                raise FormatError(f"config key {key!r} must be an integer, got {value!r}")
        net = NetConfig(**net_doc)
        cfg = TrainConfig.from_dict(doc)
    except ConfigError as exc:
        if str(exc).startswith("unknown training keys"):
            raise FormatError(str(exc)) from exc
        raise
    except TypeError as exc:
        raise FormatError(f"malformed config: {exc}") from exc
    return net, cfg


def _read_mask(path, shape=None) -> np.ndarray:
    raw = io.read_hsc(path)
    if raw.shape[2] != 1:
        raise ContractError(f"mask file must have 1 channel, got {raw.shape[2]}")
    mask = raw[:, :, 0]
    if shape is not None:
        for axis, name in ((0, "height"), (1, "width")):
            if mask.shape[axis] != shape[axis]:
                raise ContractError(f"mask {name} {mask.shape[axis]} does not match cube {name} {shape[axis]}")
    return cassi.as_mask(mask)


def cmd_simulate(args) -> None:
    cube = cassi.as_cube(io.read_hsc(args.cube))
    mask = _read_mask(args.mask, cube.shape)
    meas = cassi.simulate_measurement(cube, mask, args.step)
    if args.shot_noise_bits is not None:
        meas = cassi.inject_shot_noise(meas, args.shot_noise_bits, args.seed)
    io.write_hsc(args.out, meas)
    print(f"{meas.shape[0]}x{meas.shape[1]}x1")


def cmd_train(args) -> None:
    net, cfg = load_run_config(io.read_json(args.config))
    files = sorted(Path(args.data).glob("*.hsc")) if Path(args.data).is_dir() else []
    if not files:
        raise ContractError(f"no training cubes in {args.data}")
    cubes = [cassi.as_cube(io.read_hsc(f)) for f in files]
    mask = _read_mask(args.mask)
    result = train(cubes, mask, cfg, net)
    io.write_checkpoint(args.out, result.params, io.checkpoint_document(net, cfg.alpha, cfg.lam, cfg.patches, cfg.seed))
    if args.log:
        io.write_log_csv(args.log, result.log, LOG_COLUMNS)
    last = result.log[-1] if result.log else None
    print(f"trained {len(result.log)} steps" + (f", final total {last['total']:.6g}" if last else ""))


def cmd_infer(args) -> None:
    net, params, _ = io.read_checkpoint(args.ckpt)
    meas = io.read_hsc(args.meas)
    if meas.shape[2] != 1:
        raise ContractError(f"measurement must have 1 channel, got {meas.shape[2]}")
    mask = _read_mask(args.mask)
    if mask.shape[0] != meas.shape[0]:
        raise ContractError(f"mask height {mask.shape[0]} does not match measurement height {meas.shape[0]}")
    cube = reconstruct(meas[:, :, 0], mask, params, net)
    io.write_hsc(args.out, cube)
    print(f"{cube.shape[0]}x{cube.shape[1]}x{cube.shape[2]}")


def cmd_eval(args) -> None:
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in METRICS]
    if unknown or not wanted:
        raise FormatError(f"unknown metrics {unknown}; choose from {', '.join(METRICS)}")
    pred, gt = io.read_hsc(args.pred), io.read_hsc(args.gt)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction is {'x'.join(map(str, pred.shape))} but ground truth is {'x'.join(map(str, gt.shape))}")
    report = metrics.MetricReport(
        psnr_db=metrics.psnr(gt, pred) if "psnr" in wanted else None,
        ssim=metrics.ssim(gt, pred) if "ssim" in wanted else None,
        lfd=freq.lfd(gt, pred) if "lfd" in wanted else None,
    )
    doc = report.to_dict()
    io.write_json(args.out, doc)
    print(" ".join(f"{k}={v:.6g}" for k, v in doc.items()))


def cmd_spectrum(args) -> None:
    cube = io.read_hsc(args.cube)
    io.write_pgm(args.out, freq.spectrum_image(cube, args.channel))


def cmd_params(args) -> None:
    net, _ = load_run_config(io.read_json(args.config))
    print(count_params(net))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualspec", description="CASSI simulation and HDNet reconstruction.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="cube + mask -> coded measurement")
    p.add_argument("--cube", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--step", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--shot-noise-bits", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train HDNet on a directory of .hsc cubes")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="measurement -> reconstructed cube")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--meas", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="compare two cubes")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectrum", help="log-magnitude spectrum of one band as PGM")
    p.add_argument("--cube", required=True)
    p.add_argument("--channel", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("params", help="print the parameter count of a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args.func(args)
    except DualSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
