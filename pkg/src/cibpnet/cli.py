"""Command-line front end.

Subcommands: sample-prior, simulate-widths, diagnose-drift, train,
reconstruct, fantasize, inspect.  Every command takes --seed and produces
byte-identical outputs for identical arguments and seed.  Usage errors exit
with status 2 and a message naming the offending flag; runtime failures
print the error and exit 1.  CIBPNET_OUT_DIR overrides the default output
directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from cibpnet.checkpoint import read_checkpoint
from cibpnet.data_io import mask_bottom_half, save_csv, write_pgm
from cibpnet.experiments import (
    RunConfig,
    export_feature_maps,
    fantasize,
    load_dataset,
    make_bars_dataset,
    reconstruct,
    train,
)
from cibpnet.mcmc import SweepConfig
from cibpnet.prior import (
    IbpParams,
    drift,
    poisson_rate,
    sample_cibp,
    simulate_width_chain,
    structure_to_text,
)


def _default_out() -> str:
    return os.environ.get("CIBPNET_OUT_DIR", "cibpnet-out")


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--out-dir",
        default=_default_out(),
        help="output directory (env CIBPNET_OUT_DIR overrides the default)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cibpnet",
        description="Cascade-structured belief networks: prior simulation, "
        "diagnostics, training, and reconstruction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("sample-prior", formatter_class=fmt,
                       help="draw structures from the cascade prior")
    p.add_argument("--k0", type=int, required=True, help="number of visible units")
    p.add_argument("--alpha", type=float, default=1.0, help="expected in-degree")
    p.add_argument("--beta", type=float, default=1.0, help="sparsity parameter")
    p.add_argument("--count", type=int, default=1, help="structures to draw")
    p.add_argument("--depth-cap", type=int, default=1000, help="runaway guard")
    _add_seed(p)
    _add_out(p)

    p = sub.add_parser("simulate-widths", formatter_class=fmt,
                       help="simulate the layer-width Markov chain")
    p.add_argument("--k0", type=int, required=True, help="initial width")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--runs", type=int, default=3, help="independent traces")
    p.add_argument("--max-steps", type=int, default=1000)
    _add_seed(p)

    p = sub.add_parser("diagnose-drift", formatter_class=fmt,
                       help="tabulate the width-chain rate and drift")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--kmax", type=int, default=20, help="largest width to tabulate")

    p = sub.add_parser("train", formatter_class=fmt,
                       help="run MCMC on a dataset, writing checkpoints")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset file (IDX, PGM, or CSV)")
    src.add_argument("--bars", type=int, metavar="N",
                     help="train on N synthetic 8x8 bars images")
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--mtm", type=int, default=5, help="multiple-try candidates")
    p.add_argument("--max-depth", type=int, default=1000)
    _add_seed(p)
    _add_out(p)

    p = sub.add_parser("reconstruct", formatter_class=fmt,
                       help="fill in masked pixels from posterior checkpoints")
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="checkpoint files, or one directory of checkpoint_*.txt")
    p.add_argument("--data", required=True, help="test dataset file")
    p.add_argument("--mask-bottom-half", action="store_true",
                   help="hide the bottom half of every test image")
    p.add_argument("--train-mean", help="train_pixel_mean.txt from the training run")
    p.add_argument("--train-data", help="training dataset to recompute the baseline")
    p.add_argument("--burn", type=int, default=50)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--spacing", type=int, default=2)
    p.add_argument("--mtm", type=int, default=5)
    p.add_argument("--threads", type=int, default=1,
                   help="parallel blocks of test images")
    _add_seed(p)
    _add_out(p)

    p = sub.add_parser("fantasize", formatter_class=fmt,
                       help="draw fantasies by ancestral sampling")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--shape", help="HxW for PGM output, e.g. 8x8; CSV otherwise")
    _add_seed(p)
    _add_out(p)

    p = sub.add_parser("inspect", formatter_class=fmt,
                       help="print a checkpoint summary")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", metavar="HxW",
                   help="also export feature maps for this image shape")
    _add_out(p)

    return parser


def _expand_checkpoints(items: list[str]) -> list[Path]:
    if len(items) == 1 and Path(items[0]).is_dir():
        found = sorted(Path(items[0]).glob("checkpoint_*.txt"))
        if not found:
            raise FileNotFoundError(f"no checkpoint_*.txt under {items[0]}")
        return found
    return [Path(i) for i in items]


def _parse_shape(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        return h, w
    except ValueError:
        raise ValueError(f"bad shape {text!r}, expected HxW like 8x8") from None


def _cmd_sample_prior(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    params = IbpParams(args.alpha, args.beta)
    for i in range(args.count):
        s = sample_cibp(args.k0, params, args.depth_cap, rng)
        path = out / f"structure_{i:03d}.txt"
        path.write_text(structure_to_text(s.matrices, args.k0))
        if s.truncated:
            print(f"sample {i}: truncated at depth cap {args.depth_cap}", file=sys.stderr)
        print(path)
    return 0


def _cmd_simulate_widths(args) -> int:
    rng = np.random.default_rng(args.seed)
    params = IbpParams(args.alpha, args.beta)
    for _ in range(args.runs):
        t = simulate_width_chain(args.k0, params, args.max_steps, rng)
        line = " ".join(str(w) for w in t.widths)
        if not t.absorbed:
            line += " unabsorbed"
        print(line)
    return 0


def _cmd_diagnose_drift(args) -> int:
    params = IbpParams(args.alpha, args.beta)
    print("K\trate\tdrift")
    for k in range(1, args.kmax + 1):
        print(f"{k}\t{poisson_rate(k, params):.6f}\t{drift(k, params):.6f}")
    return 0


def _cmd_train(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.bars is not None:
        dataset = make_bars_dataset(args.bars, rng)
    else:
        dataset = load_dataset(args.data)
    config = RunConfig(
        out_dir=args.out_dir,
        sweeps=args.sweeps,
        burn_in=args.burn_in,
        thin=args.thin,
        checkpoint_every=args.checkpoint_every,
        sweep=SweepConfig(mtm_candidates=args.mtm, seed=args.seed,
                          max_depth=args.max_depth),
        alpha0=args.alpha,
        beta0=args.beta,
    )
    paths = train(config, rng, dataset=dataset)
    print(f"wrote {len(paths)} checkpoints to {args.out_dir}")
    return 0


def _cmd_reconstruct(args) -> int:
    rng = np.random.default_rng(args.seed)
    paths = _expand_checkpoints(args.checkpoints)
    dataset = load_dataset(args.data)
    if args.mask_bottom_half:
        dataset = mask_bottom_half(dataset)
    if dataset.masks is None:
        raise ValueError("test data has no masks; pass --mask-bottom-half or a masked CSV")
    if args.train_mean:
        mean = np.array([float(v) for v in Path(args.train_mean).read_text().split()])
    elif args.train_data:
        mean = load_dataset(args.train_data).observations.mean(axis=0)
    else:
        raise ValueError("baseline needs --train-mean or --train-data")
    report, filled = reconstruct(
        paths, dataset, rng, mean,
        burn=args.burn, samples=args.samples, spacing=args.spacing,
        mtm_candidates=args.mtm, threads=args.threads,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "reconstruction_report.csv")
    if dataset.image_shape is not None:
        h, w = dataset.image_shape
        for i in range(filled.shape[0]):
            write_pgm(out / f"filled_{i:03d}.pgm", filled[i].reshape(h, w))
    else:
        from cibpnet.data_io import Dataset

        save_csv(out / "filled.csv", Dataset(np.clip(filled, -1 + 1e-9, 1 - 1e-9)))
    print(
        f"model mse {report.model_mse.mean():.6g}  "
        f"baseline mse {report.baseline_mse.mean():.6g}  "
        f"({report.n_posterior_samples} posterior samples)"
    )
    return 0


def _cmd_fantasize(args) -> int:
    rng = np.random.default_rng(args.seed)
    paths = _expand_checkpoints(args.checkpoints)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = fantasize(paths, args.count, rng)
    if args.shape:
        h, w = _parse_shape(args.shape)
        for i in range(images.shape[0]):
            write_pgm(out / f"fantasy_{i:03d}.pgm", images[i].reshape(h, w))
    else:
        from cibpnet.data_io import Dataset

        save_csv(out / "fantasies.csv", Dataset(images))
    print(f"wrote {images.shape[0]} fantasies to {out}")
    return 0


def _cmd_inspect(args) -> int:
    ck = read_checkpoint(args.checkpoint)
    s = ck.structure
    print(f"visible units: {s.visible_width}")
    print(f"hidden layers: {s.depth}")
    print("widths:", " ".join(str(w) for w in s.widths))
    for m in range(1, s.depth + 1):
        em = s.matrices[m - 1]
        print(f"layer {m}: {em.cols} units, {int(em.z.sum())} edges to layer {m - 1}")
    print("alpha:", " ".join(format(a, ".6g") for a in ck.hypers.alphas))
    print("beta: ", " ".join(format(b, ".6g") for b in ck.hypers.betas))
    for m, lp in enumerate(ck.layers):
        pr = lp.priors
        print(
            f"layer {m} priors: weight N({pr.weight_mean:.4g}, prec {pr.weight_precision:.4g}) "
            f"bias N({pr.bias_mean:.4g}, prec {pr.bias_precision:.4g}) "
            f"precision Gamma({pr.precision_shape:.4g}, {pr.precision_rate:.4g})"
        )
    print("states stored:", "yes" if ck.states is not None else "no")
    if args.features:
        shape = _parse_shape(args.features)
        outs = export_feature_maps(args.checkpoint, shape, args.out_dir)
        print(f"wrote {len(outs)} feature maps to {args.out_dir}")
    return 0


_HANDLERS = {
    "sample-prior": _cmd_sample_prior,
    "simulate-widths": _cmd_simulate_widths,
    "diagnose-drift": _cmd_diagnose_drift,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "fantasize": _cmd_fantasize,
    "inspect": _cmd_inspect,
}


def run(argv: list[str]) -> int:
    """Parse arguments and dispatch; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except BrokenPipeError:
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
