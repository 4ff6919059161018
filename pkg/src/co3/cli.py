"""Command-line interface: training runs, plot-data sweeps, file codec.

Subcommands: train, bias-sweep, fit-dist, codec, report. All outputs are
plot-ready CSV plus a key:value summary; nothing needs to be scraped from
logs. Config precedence is defaults < --config JSON file < command-line
flags, and the CO3_OUT environment variable overrides --out.
"""

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets, distmodel, entropy, fpq, trainer

_TRAIN_KEYS = {
    "eta": float,
    "gamma": None,  # scalar or list
    "epochs": int,
    "users": int,
    "batch_size": int,
    "fp": None,  # "1,2,1" or [1, 2, 1]
    "seed": int,
    "dataset": str,
    "data_path": str,
    "out": str,
    "include_headers_in_payload": None,
    "quantizer": str,
    "bias_mode": str,
    "shard_mode": str,
    "blobs_n": int,
    "blobs_classes": int,
    "blobs_features": int,
    "blobs_seed": int,
    "blobs_separation": float,
    "blobs_feature_scale": float,
    "hidden": None,
}

_DEFAULTS = {
    "eta": 0.01,
    "gamma": [0.9],
    "epochs": 30,
    "users": 1,
    "batch_size": 64,
    "fp": [1, 2, 1],
    "seed": 0,
    "dataset": "blobs",
    "data_path": None,
    "out": "runs",
    "include_headers_in_payload": True,
    "quantizer": "fp",
    "bias_mode": "optimize",
    "shard_mode": "partition",
    "blobs_n": 5000,
    "blobs_classes": 10,
    "blobs_features": 32,
    "blobs_seed": 7,
    "blobs_separation": 2.4,
    "blobs_feature_scale": 0.35,
    "hidden": [128, 64],
}


def _parse_fp(value):
    parts = [int(v) for v in (value.split(",") if isinstance(value, str) else value)]
    if len(parts) != 3:
        raise ValueError(f"fp format needs sign,mant,exp — got {value!r}")
    sign, mant, exp = parts
    return fpq.FpFormat(mant_bits=mant, exp_bits=exp, sign_bits=sign)


def _parse_gammas(value):
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        return [float(v) for v in value.split(",")]
    return [float(v) for v in value]


def _parse_bool(value):
    if isinstance(value, bool):
        return value
    if str(value).lower() in ("true", "1", "yes"):
        return True
    if str(value).lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {value!r}")


def _load_config_file(path):
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = sorted(set(doc) - set(_TRAIN_KEYS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return doc


def _resolve_settings(args):
    settings = dict(_DEFAULTS)
    if args.config:
        settings.update(_load_config_file(args.config))
    for key in _TRAIN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    if os.environ.get("CO3_OUT"):
        settings["out"] = os.environ["CO3_OUT"]
    settings["gamma"] = _parse_gammas(settings["gamma"])
    settings["fmt"] = _parse_fp(settings["fp"])
    settings["include_headers_in_payload"] = _parse_bool(settings["include_headers_in_payload"])
    settings["hidden"] = tuple(int(h) for h in settings["hidden"])
    return settings


def _build_dataset(settings):
    kind = settings["dataset"]
    if kind == "blobs":
        return datasets.synth_blobs(
            settings["blobs_n"],
            settings["blobs_classes"],
            settings["blobs_features"],
            settings["blobs_seed"],
            n_test=settings["blobs_n"] // 5,
            separation=settings["blobs_separation"],
            feature_scale=settings["blobs_feature_scale"],
        )
    if settings["data_path"] is None:
        raise ValueError(f"--data-path is required for dataset {kind!r}")
    if kind == "cifar10":
        return datasets.load_cifar10_binary(settings["data_path"], limit=5000)
    if kind == "idx":
        return datasets.load_idx(settings["data_path"])
    if kind == "csv":
        return datasets.load_csv(settings["data_path"])
    raise ValueError(f"unknown dataset {kind!r}")


def cmd_train(args):
    settings = _resolve_settings(args)
    dataset = _build_dataset(settings)
    gammas = settings["gamma"]
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for gamma in gammas:
        config = trainer.TrainConfig(
            eta=settings["eta"],
            gamma=gamma,
            epochs=settings["epochs"],
            users=settings["users"],
            batch_size=settings["batch_size"],
            fmt=settings["fmt"],
            seed=settings["seed"],
            quantizer=settings["quantizer"],
            bias_mode=settings["bias_mode"],
            shard_mode=settings["shard_mode"],
            include_headers=settings["include_headers_in_payload"],
            hidden=settings["hidden"],
            keep_fit_samples=True,
        )
        rundir = out if len(gammas) == 1 else out / f"gamma_{gamma:g}"
        metrics, _ = trainer.train(config, dataset)
        metrics.write(rundir)
        summaries.append((gamma, metrics))
        print(
            f"gamma={gamma:g}: final_accuracy={metrics.final_accuracy:.4f} "
            f"total_uplink_bits={metrics.total_bits()}"
        )
    with open(out / "sweep_summary.txt", "w") as fh:
        for gamma, metrics in summaries:
            fh.write(
                f"gamma {gamma:g}: accuracy {metrics.final_accuracy:.6f}, "
                f"total_uplink_bits {metrics.total_bits()}, "
                f"bits_per_param_per_round {metrics.bits_per_param_per_round():.4f}\n"
            )
    return 0


def cmd_bias_sweep(args):
    if not (0 < args.beta_min <= args.beta_max <= 5):
        raise ValueError("beta range must lie within (0, 5]")
    fmt = _parse_fp(args.fp)
    betas = np.arange(args.beta_min, args.beta_max + 1e-9, args.beta_step)
    outpath = Path(os.environ.get("CO3_OUT") or args.out)
    outpath.parent.mkdir(parents=True, exist_ok=True)
    with open(outpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "b_grid", "b_polynomial"])
        for beta in betas:
            beta = float(beta)
            alpha = args.sigma * math.sqrt(
                math.exp(math.lgamma(1 / beta) - math.lgamma(3 / beta))
            )
            dist = distmodel.GenNormParams(beta, 0.0, alpha)
            b_grid = fpq.optimize_bias(dist, fmt)
            w.writerow([f"{beta:.6g}", repr(b_grid), repr(fpq.bias_polynomial(beta, args.sigma))])
    print(f"wrote {len(betas)} rows to {outpath}")
    return 0


def cmd_fit_dist(args):
    rundir = Path(args.run)
    sampledir = rundir / "samples"
    files = sorted(sampledir.glob("epoch*_layer*.npy"))
    if not files:
        raise FileNotFoundError(f"no gradient samples under {sampledir}; run `co3 train` first")
    outpath = Path(args.out) if args.out else rundir / "fits.csv"
    with open(outpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "layer", "family", "beta", "mu", "alpha_or_scale", "w2"])
        for f in files:
            stem = f.stem  # epochNNNN_layerL
            epoch = int(stem.split("_")[0][5:])
            layer = int(stem.split("layer")[1])
            samples = np.load(f).astype(np.float64)
            for r in distmodel.fit_all(samples):
                w.writerow([epoch, layer, r.family, repr(r.beta), repr(r.mu), repr(r.scale), repr(r.w2)])
    print(f"wrote {outpath}")
    return 0


def cmd_codec(args):
    fmt = _parse_fp(args.fp)
    if args.mode == "encode":
        x = np.fromfile(args.infile, dtype="<f4").astype(np.float64)
        dist = distmodel.GenNormParams(args.beta, args.mu, args.alpha)
        bias = args.bias if args.bias is not None else fpq.optimize_bias(dist, fmt)
        fmt = fmt.with_bias(float(np.float32(bias)))
        codebook = entropy.build_codebook(distmodel.cell_probabilities(dist, fmt))
        block = entropy.encode(fpq.quantize(x, fmt), codebook)
        Path(args.outfile).write_bytes(block.to_bytes())
        bits_per = block.payload_bits / max(1, x.size)
        print(
            f"encoded {x.size} values: payload_bits={block.payload_bits} "
            f"header_bits={block.header_bits} bits_per_weight={bits_per:.4f}"
        )
    else:
        data = Path(args.infile).read_bytes()
        block = entropy.EncodedBlock.from_bytes(data)
        values = fpq.dequantize(entropy.decode_block(block))
        values.astype("<f4").tofile(args.outfile)
        print(f"decoded {block.symbol_count} values from {args.infile}")
    return 0


def cmd_report(args):
    rundir = Path(args.run)
    summary = rundir / "summary.txt"
    if not summary.exists():
        raise FileNotFoundError(f"no summary.txt under {rundir}")
    keys = {}
    for line in summary.read_text().splitlines():
        if ": " in line:
            k, v = line.split(": ", 1)
            keys[k] = v
    print(f"run: {rundir}")
    for k in (
        "final_test_accuracy",
        "total_uplink_bits",
        "payload_bits",
        "header_bits",
        "bits_per_param_per_round",
        "param_count",
        "rounds",
        "wall_time_s",
    ):
        if k in keys:
            print(f"{k}: {keys[k]}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="co3", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the compressed-training simulator")
    t.add_argument("--config", type=str, default=None, help="JSON config file")
    t.add_argument("--eta", type=float, default=None)
    t.add_argument("--gamma", type=str, default=None, help="memory decay, comma list sweeps")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--users", type=int, default=None)
    t.add_argument("--batch", dest="batch_size", type=int, default=None)
    t.add_argument("--fp", type=str, default=None, help="sign,mant,exp e.g. 1,2,1")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--dataset", choices=("blobs", "cifar10", "idx", "csv"), default=None)
    t.add_argument("--data-path", dest="data_path", type=str, default=None)
    t.add_argument("--out", type=str, default=None)
    t.add_argument(
        "--include-headers-in-payload",
        dest="include_headers_in_payload",
        choices=("true", "false"),
        default=None,
    )
    t.add_argument("--quantizer", choices=("fp", "identity"), default=None)
    t.add_argument("--bias-mode", dest="bias_mode", choices=("optimize", "polynomial", "fixed"), default=None)
    t.add_argument("--shard-mode", dest="shard_mode", choices=("partition", "replicate"), default=None)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bias-sweep", help="grid-optimized vs polynomial exponent bias")
    b.add_argument("--beta-min", type=float, default=0.3)
    b.add_argument("--beta-max", type=float, default=1.6)
    b.add_argument("--beta-step", type=float, default=0.05)
    b.add_argument("--sigma", type=float, default=1.0)
    b.add_argument("--fp", type=str, default="1,2,1")
    b.add_argument("--out", type=str, default="bias_sweep.csv")
    b.set_defaults(func=cmd_bias_sweep)

    f = sub.add_parser("fit-dist", help="refit distribution families from run artifacts")
    f.add_argument("run", type=str, help="run directory containing samples/")
    f.add_argument("--out", type=str, default=None)
    f.set_defaults(func=cmd_fit_dist)

    c = sub.add_parser("codec", help="encode/decode raw little-endian f32 files")
    c.add_argument("mode", choices=("encode", "decode"))
    c.add_argument("infile", type=str)
    c.add_argument("outfile", type=str)
    c.add_argument("--fp", type=str, default="1,2,1")
    c.add_argument("--bias", type=float, default=None)
    c.add_argument("--beta", type=float, default=2.0)
    c.add_argument("--mu", type=float, default=0.0)
    c.add_argument("--alpha", type=float, default=1.4142135623730951)
    c.set_defaults(func=cmd_codec)

    r = sub.add_parser("report", help="summarize a completed run directory")
    r.add_argument("run", type=str)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, entropy.CorruptionError, entropy.TruncationError, trainer.DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
