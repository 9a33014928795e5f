"""Command-line interface: synth, train, unmix, eval, gradcheck.

Exit codes: 0 success, 1 check failure, 2 usage/input error, 3 numerical
failure. Every run that produces files also writes a JSON manifest with the
resolved configuration, seeds and paths, which is enough to reproduce the
outputs bit-exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, hsio
from .errors import (ConfigError, ContractViolation, DomainError, DscnError,
                     FormatError, InputError, NumericalError, UsageError)
from .fcls import FclsConfig, fcls_unmix_cube
from .gradcheck import run_all_checks
from .losses import LossWeights, rmse_per_material
from .model import Fusion, ModelConfig
from .optim import TrainConfig, train, unmix
from .scene import SceneSpec, synth_scene

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _parse_size(text):
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"size must look like 32x32, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _parse_pair(text):
    m = re.fullmatch(r"(\d+),(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected FILTERS,WIDTH pair, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def write_manifest(path, command, params, inputs, outputs):
    doc = {
        "command": command,
        "parameters": params,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "created": datetime.now(timezone.utc).isoformat(),
        "tool": {"name": "dscn", "version": __version__},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest_params(args, skip=("func", "manifest")):
    params = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or callable(value):
            continue
        if isinstance(value, tuple):
            value = list(value)
        params[key] = value
    return params


def _model_config(args, bands, num_endmembers):
    return ModelConfig(
        bands=bands,
        num_endmembers=num_endmembers,
        block1=args.block1,
        block2=args.block2,
        block3=args.block3,
        pool=args.pool,
        fusion=Fusion(args.fusion),
        spectral_norm_mode=("per-sample" if args.snorm_mode == "per-sample"
                            else "batch"),
        seed=args.seed,
    )


def _train_config(args, seed=None):
    return TrainConfig(
        iterations=args.iters,
        batch_size=args.batch_size,
        seed=args.seed if seed is None else seed,
        weights=LossWeights(args.lambda1, args.lambda2, args.lambda3),
        lr=args.lr,
    )


def _write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total", "recon", "sparsity", "decay"])
        for i, row in enumerate(trace):
            writer.writerow([i, f"{row.total:.17g}", f"{row.recon:.17g}",
                             f"{row.sparsity:.17g}", f"{row.decay:.17g}"])


def _rmse_table(per_material, average, scale=100.0):
    lines = [f"{'Material':<10}RMSE (x1e-2)"]
    for i, value in enumerate(per_material, start=1):
        lines.append(f"{'#' + str(i):<10}{value * scale:.2f}")
    lines.append(f"{'Avg.':<10}{average * scale:.2f}")
    return "\n".join(lines)


def _mean_std_table(samples, scale=100.0):
    # samples: (trials, K) per-material RMSE values in natural units
    means = samples.mean(axis=0) * scale
    stds = samples.std(axis=0) * scale
    avg = samples.mean(axis=1)
    lines = [f"{'Material':<10}RMSE (x1e-2)"]
    for i in range(samples.shape[1]):
        lines.append(f"{'#' + str(i + 1):<10}{means[i]:.2f}±{stds[i]:.1f}")
    lines.append(f"{'Avg.':<10}{avg.mean() * scale:.2f}±{avg.std() * scale:.1f}")
    return "\n".join(lines)


def cmd_synth(args):
    spec = SceneSpec(num_endmembers=args.k, bands=args.bands,
                     width=args.size[0], height=args.size[1],
                     snr_db=args.snr, dirichlet_alpha=args.alpha, seed=args.seed)
    cube, endmembers, amaps = synth_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"cube": out / "cube.hsc1", "endmembers": out / "endmembers.emm1",
             "abundance": out / "abundance.abm1"}
    hsio.write_cube(paths["cube"], cube)
    hsio.write_endmembers(paths["endmembers"], endmembers)
    hsio.write_abundance(paths["abundance"], amaps)
    manifest = args.manifest or out / "manifest.json"
    write_manifest(manifest, "synth", _manifest_params(args), [],
                   list(paths.values()))
    for name, p in paths.items():
        print(f"{name}: {p}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_train(args):
    cube = hsio.read_cube(args.cube)
    endmembers = hsio.load_endmembers(args.endmembers)
    bands = cube.shape[2]
    if endmembers.shape[0] != bands:
        raise InputError(
            f"cube has {bands} bands but endmembers have {endmembers.shape[0]} rows")
    pixels = cube.reshape(-1, bands)
    cfg = _model_config(args, bands, endmembers.shape[1])
    tc = _train_config(args)
    model, trace = train(pixels, endmembers, cfg, tc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hsio.write_model(out, model)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(out.suffix + ".loss.csv")
    _write_trace_csv(trace_path, trace)
    manifest = args.manifest or out.with_suffix(out.suffix + ".manifest.json")
    write_manifest(manifest, "train", _manifest_params(args),
                   [args.cube, args.endmembers], [out, trace_path])
    print(f"model: {out}")
    print(f"loss trace: {trace_path}")
    print(f"final loss: {trace[-1].total:.6f} (recon {trace[-1].recon:.6f})")
    print(f"manifest: {manifest}")
    return EXIT_OK


def _export_pgms(pgm_dir, estimate, truth=None):
    pgm_dir = Path(pgm_dir)
    pgm_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k in range(estimate.shape[2]):
        p = pgm_dir / f"estimate_{k + 1}.pgm"
        hsio.write_pgm(p, estimate[:, :, k])
        written.append(p)
        if truth is not None:
            p = pgm_dir / f"absdiff_{k + 1}.pgm"
            hsio.write_pgm(p, np.abs(estimate[:, :, k] - truth[:, :, k]))
            written.append(p)
    return written


def cmd_unmix(args):
    cube = hsio.read_cube(args.cube)
    outputs = []
    if args.baseline == "fcls":
        if not args.endmembers:
            raise UsageError("--baseline fcls requires --endmembers")
        endmembers = hsio.load_endmembers(args.endmembers)
        estimate = fcls_unmix_cube(cube, endmembers, FclsConfig())
    else:
        if not args.model:
            raise UsageError("unmix requires --model (or --baseline fcls)")
        model = hsio.read_model(args.model)
        if model.config.bands != cube.shape[2]:
            raise InputError(
                f"model was trained on {model.config.bands} bands but the cube "
                f"has {cube.shape[2]}")
        flat = unmix(model, cube.reshape(-1, cube.shape[2]))
        estimate = flat.reshape(cube.shape[0], cube.shape[1], -1)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hsio.write_abundance(out, estimate)
    outputs.append(out)
    truth = hsio.read_abundance(args.truth) if args.truth else None
    if truth is not None and truth.shape[:2] != estimate.shape[:2]:
        raise InputError(
            f"truth spatial dims {truth.shape[:2]} do not match cube "
            f"{estimate.shape[:2]}")
    if args.pgm_dir:
        outputs.extend(_export_pgms(args.pgm_dir, estimate, truth))
    manifest = args.manifest or out.with_suffix(out.suffix + ".manifest.json")
    inputs = [p for p in (args.cube, args.model, args.endmembers, args.truth) if p]
    write_manifest(manifest, "unmix", _manifest_params(args), inputs, outputs)
    print(f"abundance: {out}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def _eval_trials(args):
    cube = hsio.read_cube(args.cube)
    endmembers = hsio.load_endmembers(args.endmembers)
    truth = hsio.read_abundance(args.truth)
    bands = cube.shape[2]
    if endmembers.shape[0] != bands:
        raise InputError(
            f"cube has {bands} bands but endmembers have {endmembers.shape[0]} rows")
    if truth.shape[:2] != cube.shape[:2]:
        raise InputError(
            f"truth spatial dims {truth.shape[:2]} do not match cube {cube.shape[:2]}")
    pixels = cube.reshape(-1, bands)
    samples = []
    for trial in range(args.trials):
        seed = args.seed + trial
        cfg = _model_config(args, bands, endmembers.shape[1])
        cfg = ModelConfig(**{**cfg.__dict__, "seed": seed})
        tc = _train_config(args, seed=seed)
        model, _ = train(pixels, endmembers, cfg, tc)
        flat = unmix(model, pixels)
        per, _ = rmse_per_material(flat, truth.reshape(-1, truth.shape[2]))
        samples.append(per)
        print(f"trial {trial + 1}/{args.trials} (seed {seed}): "
              f"avg RMSE x1e-2 = {per.mean() * 100:.2f}", file=sys.stderr)
    samples = np.array(samples)
    table = _mean_std_table(samples)
    print(table)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["material", "rmse_mean_x100", "rmse_std_x100"])
            for i in range(samples.shape[1]):
                writer.writerow([i + 1, f"{samples[:, i].mean() * 100:.6f}",
                                 f"{samples[:, i].std() * 100:.6f}"])
            avg = samples.mean(axis=1)
            writer.writerow(["avg", f"{avg.mean() * 100:.6f}", f"{avg.std() * 100:.6f}"])
        if args.manifest:
            write_manifest(args.manifest, "eval", _manifest_params(args),
                           [args.cube, args.endmembers, args.truth], [args.out])
    return EXIT_OK


def cmd_eval(args):
    if args.cube:
        if not (args.endmembers and args.truth):
            raise UsageError("trial evaluation requires --cube, --endmembers and --truth")
        return _eval_trials(args)
    if not (args.estimate and args.truth):
        raise UsageError("eval requires --estimate and --truth (or the --cube trial form)")
    estimate = hsio.read_abundance(args.estimate)
    truth = hsio.read_abundance(args.truth)
    if estimate.shape != truth.shape:
        raise InputError(
            f"estimate dims {estimate.shape} do not match truth {truth.shape}")
    per, avg = rmse_per_material(estimate, truth)
    print(_rmse_table(per, avg))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["material", "rmse_x100"])
            for i, value in enumerate(per, start=1):
                writer.writerow([i, f"{value * 100:.6f}"])
            writer.writerow(["avg", f"{avg * 100:.6f}"])
        if args.manifest:
            write_manifest(args.manifest, "eval", _manifest_params(args),
                           [args.estimate, args.truth], [args.out])
    return EXIT_OK


def cmd_gradcheck(args):
    print(f"gradient check: h={args.h:g}, tol={args.tol:g}, seed={args.seed}")
    reports = run_all_checks(h=args.h, tol=args.tol, seed=args.seed)
    failures = 0
    for report in reports:
        print(report.line())
        if not report.passed:
            failures += 1
    print(f"{len(reports) - failures}/{len(reports)} checks passed")
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


def _add_arch_flags(parser):
    parser.add_argument("--fusion", choices=("s", "p"), default="s",
                        help="fusion head: sparse (s) or probabilistic (p)")
    parser.add_argument("--block1", type=_parse_pair, default=(16, 5),
                        metavar="FILTERS,WIDTH")
    parser.add_argument("--block2", type=_parse_pair, default=(32, 5),
                        metavar="FILTERS,WIDTH")
    parser.add_argument("--block3", type=_parse_pair, default=(8, 3),
                        metavar="FILTERS,WIDTH")
    parser.add_argument("--pool", type=_parse_pair, default=(2, 2),
                        metavar="WINDOW,STRIDE")
    parser.add_argument("--snorm-mode", choices=("per-sample", "batch"),
                        default="per-sample",
                        help="spectral-norm moment pooling")


def _add_train_flags(parser):
    parser.add_argument("--iters", type=int, default=5000)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--lambda1", type=float, default=10.0,
                        help="reconstruction term weight")
    parser.add_argument("--lambda2", type=float, default=0.4,
                        help="abundance sparsity weight")
    parser.add_argument("--lambda3", type=float, default=1e-5,
                        help="weight decay")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dscn",
        description="Spectral-convolution abundance estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--k", type=int, required=True, help="number of endmembers")
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--size", type=_parse_size, required=True, metavar="WxH")
    p.add_argument("--snr", type=float, default=None,
                   help="SNR in dB; omit for a noiseless scene")
    p.add_argument("--alpha", type=float, default=1.0,
                   help="Dirichlet concentration for the abundances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an encoder on a cube")
    p.add_argument("--cube", required=True)
    p.add_argument("--endmembers", required=True,
                   help="EMM1 file or CSV with the frozen endmembers")
    _add_arch_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--trace", default=None, help="loss CSV path")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("unmix", help="estimate abundances for a cube")
    p.add_argument("--model", default=None)
    p.add_argument("--cube", required=True)
    p.add_argument("--baseline", choices=("fcls",), default=None,
                   help="use the FCLS solver instead of a trained model")
    p.add_argument("--endmembers", default=None,
                   help="endmembers for --baseline fcls")
    p.add_argument("--truth", default=None,
                   help="ground-truth ABM1 for difference images")
    p.add_argument("--pgm-dir", default=None,
                   help="write per-material PGM images here")
    p.add_argument("--out", required=True, help="abundance output path")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("eval", help="RMSE tables against ground truth")
    p.add_argument("--estimate", default=None, help="estimated ABM1 file")
    p.add_argument("--truth", default=None, help="ground-truth ABM1 file")
    p.add_argument("--cube", default=None,
                   help="with --endmembers/--truth: run train+unmix trials")
    p.add_argument("--endmembers", default=None)
    p.add_argument("--trials", type=int, default=20)
    _add_arch_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="base seed; trials use seed..seed+n-1")
    p.add_argument("--out", default=None, help="CSV output path")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ContractViolation, DomainError, FormatError,
            InputError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DscnError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
