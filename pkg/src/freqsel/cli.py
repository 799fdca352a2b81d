"""Command-line entry point: ``freqsel <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure,
3 failed self-check.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checks, codec, dataio
from .checkpoint import load_checkpoint, round_to_disk, save_checkpoint
from .errors import CheckFailure, ConfigError, FreqselError
from .experiments import encode_all, spatial_arrays
from .models import ModelSpec, TrainConfig, build_model, evaluate, train
from .select import (SelectionMask, heatmap_aggregate, heatmap_emit, named_mask,
                     resolve_mask, square_mask, triangle_mask)


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _counts(text):
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected kY,kCb,kCr, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three counts, got {text!r}")
    return parts


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def cmd_encode(a):
    img = dataio.ppm_read(Path(a.inp).read_bytes())
    mask = resolve_mask(a.mask)
    stats = codec.ChannelStats.loads(Path(a.stats).read_text()) if a.stats else None
    t = codec.encode_image(img, mask, stats)
    Path(a.out).write_bytes(dataio.tensor_write(t))
    print(f"wrote {a.out} extents {','.join(map(str, t.shape))}")


def cmd_stats(a):
    ds = dataio.read_dataset(a.data)
    stats = codec.ChannelStats(192)
    for img in ds.images:
        stats.update(codec.encode_image(img))
    stats.finalize()
    Path(a.out).write_text(stats.dumps())
    print(f"wrote {a.out} from {len(ds.images)} images")


def cmd_mask(a):
    if a.name:
        mask = named_mask(a.name)
    elif a.square:
        mask = square_mask(*a.square)
    else:
        mask = triangle_mask(*a.triangle)
    text = mask.dumps()
    if a.out:
        Path(a.out).write_text(text)
        print(f"wrote {a.out} with {len(mask)} channels {mask.counts}")
    else:
        sys.stdout.write(text)


def cmd_gen_data(a):
    ds = dataio.gen_band_dataset(k=a.k, samples_per_class=a.n, m=a.m, amplitude=a.a,
                                 sigma=a.sigma, extents=(a.size, a.size), seed=a.seed,
                                 regime=a.regime, out_dir=a.out_dir)
    print(f"wrote {len(ds.samples)} samples to {a.out_dir}")


def _freq_inputs(images, mask, stats):
    x = encode_all(images, mask)
    return stats.standardize(x)


def cmd_train(a):
    ds = dataio.read_dataset(a.data)
    gated = a.gate == "on"
    cfg = TrainConfig(lr=a.lr, epochs=a.epochs, batch_size=a.batch_size, lam=a.lam,
                      tau=a.tau, seed=a.seed)
    if a.model == "freq":
        mask = resolve_mask(a.mask)
        if gated and len(mask) != 192:
            # gate decisions index the full channel set
            raise ConfigError("the gate needs all 192 channels; drop --mask")
        x = encode_all(ds.images, mask)
        stats = codec.compute_stats(x)
        x = stats.standardize(x)
        spec = ModelSpec("freq", len(mask), ds.k, gated=gated, seed=a.seed)
    else:
        if gated:
            raise ConfigError("--gate on needs --model freq")
        mask = stats = None
        x = spatial_arrays(ds.images, downsample=not a.full_res)
        spec = ModelSpec("spatial", 3, ds.k, seed=a.seed)
    model = build_model(spec)
    result = train(model, x, ds.labels, cfg)
    round_to_disk(model)
    config = {"lr": a.lr, "epochs": a.epochs, "batch_size": a.batch_size, "lambda": a.lam,
              "tau": a.tau, "seed": a.seed, "downsample": a.model == "spatial" and not a.full_res}
    save_checkpoint(a.out, model, metrics=result.metrics, stats=stats, mask=mask, config=config)
    last = result.metrics[-1]
    print(f"wrote {a.out}: train accuracy {last['accuracy']:.4f}, loss {last['loss']:.4f}")


def cmd_heatmap(a):
    model, stats, mask = load_checkpoint(a.ckpt)
    if not model.spec.gated:
        raise ConfigError("checkpoint has no gate")
    ds = dataio.read_dataset(a.data)
    x = _freq_inputs(ds.images, mask or SelectionMask.all_pass(), stats)
    ev = evaluate(model, x, ds.labels, mode=a.mode, seed=a.seed)
    hm = heatmap_aggregate(ev.decisions)
    for p in heatmap_emit(hm, a.out_prefix):
        print(f"wrote {p}")
    print(f"accuracy {ev.accuracy:.4f}, mean channels on {ev.mean_channels_on:.2f}")


def cmd_check(a):
    if not checks.run_checks():
        raise CheckFailure("one or more checks failed")


def build_parser():
    p = Parser(prog="freqsel", description="Frequency-domain channel selection toolkit.")
    p.add_argument("--threads", type=_positive, default=1,
                   help="accepted for compatibility; execution is single-threaded and deterministic")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("encode", help="PPM image -> FDT1 channel tensor")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--mask", default="all", help="mask file, DCT-<n><S|T> name, or 'all'")
    s.add_argument("--stats", help="FDSTATS file; standardizes the selected channels")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_encode)

    s = sub.add_parser("stats", help="per-channel mean/variance over a dataset")
    s.add_argument("--data", required=True, help="dataset manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_stats)

    s = sub.add_parser("mask", help="write a static channel selection")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--name")
    g.add_argument("--square", type=_counts, metavar="kY,kCb,kCr")
    g.add_argument("--triangle", type=_counts, metavar="kY,kCb,kCr")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_mask)

    s = sub.add_parser("gen-data", help="synthetic band-signature dataset")
    s.add_argument("--k", type=_positive, default=4)
    s.add_argument("--n", type=_positive, default=100, help="samples per class")
    s.add_argument("--m", type=_positive, default=3)
    s.add_argument("--a", type=float, default=64.0)
    s.add_argument("--sigma", type=float, default=4.0)
    s.add_argument("--size", type=_positive, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--regime", choices=dataio.REGIMES, default="anywhere")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train", help="train a model and write a checkpoint directory")
    s.add_argument("--model", choices=("freq", "spatial"), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mask", default="all")
    s.add_argument("--gate", choices=("on", "off"), default="off")
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--tau", type=float, default=1.0)
    s.add_argument("--epochs", type=_positive, default=40)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--batch-size", type=_positive, default=32)
    s.add_argument("--full-res", action="store_true", help="spatial model on full-resolution images")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("heatmap", help="aggregate gate decisions over a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=("sample", "threshold"), default="sample")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(fn=cmd_heatmap)

    s = sub.add_parser("check", help="run the oracle and invariant self-tests")
    s.set_defaults(fn=cmd_check)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.fn(args)
    except CheckFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FreqselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
