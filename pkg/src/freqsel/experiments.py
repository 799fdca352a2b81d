"""Desk-scale experiments: frequency vs spatial inputs, gate salience, pruning."""

from dataclasses import dataclass

import numpy as np

from . import codec
from . import dataio
from . import gate as gt
from .models import (ModelSpec, TrainConfig, build_model, downsample2x, evaluate,
                     spatial_input, train)
from .select import HeatMap, SelectionMask, heatmap_aggregate, top_k_mask


def encode_all(images, mask=None):
    return np.stack([codec.encode_image(img, mask) for img in images])


def freq_arrays(train_images, test_images, mask=None):
    """Encode both splits and standardize with statistics from the training split."""
    xtr = encode_all(train_images, mask)
    xte = encode_all(test_images, mask)
    stats = codec.compute_stats(xtr)
    return stats.standardize(xtr), stats.standardize(xte), stats


def spatial_arrays(images, downsample=True):
    return np.stack([spatial_input(downsample2x(img) if downsample else img) for img in images])


@dataclass
class Comparison:
    freq_accuracy: float
    spatial_accuracy: float
    freq_result: object
    spatial_result: object

    @property
    def gap(self):
        return self.freq_accuracy - self.spatial_accuracy


def split_dataset(k=4, n_train=500, n_test=200, regime="high_only", seed=0, **gen_kwargs):
    ds = dataio.gen_band_dataset(k=k, samples_per_class=n_train + n_test, seed=seed,
                                 regime=regime, **gen_kwargs)
    return ds, *dataio.split_per_class(ds, n_train)


def freq_vs_spatial(train_ds, test_ds, cfg, seed=0):
    """Train freqnet on full-resolution DCT channels and spatialnet on 2x-downsampled RGB."""
    ytr, yte = train_ds.labels, test_ds.labels
    xtr, xte, _ = freq_arrays(train_ds.images, test_ds.images)
    fnet = build_model(ModelSpec("freq", xtr.shape[-1], train_ds.k, seed=seed))
    fres = train(fnet, xtr, ytr, cfg)
    facc = evaluate(fnet, xte, yte).accuracy

    str_, ste = spatial_arrays(train_ds.images), spatial_arrays(test_ds.images)
    snet = build_model(ModelSpec("spatial", 3, train_ds.k, seed=seed))
    sres = train(snet, str_, ytr, cfg)
    sacc = evaluate(snet, ste, yte).accuracy
    return Comparison(facc, sacc, fres, sres)


@dataclass
class GateRun:
    model: object
    heatmap: object
    signature_rate: float
    other_rate: float
    result: object
    stats: object
    mean_probs: np.ndarray     # gate on-probability per channel, averaged over the test set
    accuracy: float

    @property
    def ratio(self):
        return self.signature_rate / self.other_rate if self.other_rate > 0 else float("inf")


def mean_on_probability(model, x, batch_size=256):
    """Average over samples of each channel's gate on-probability."""
    total = np.zeros(model.spec.in_channels)
    for start in range(0, len(x), batch_size):
        off, on = gt.gate_scores(x[start:start + batch_size], model.params)
        total += gt.on_probability(off, on).sum(axis=0)
    return total / len(x)


def gate_salience(train_ds, test_ds, cfg, seed=0):
    """Train a gated 192-channel freqnet and aggregate test-set decisions into a heat map."""
    xtr, xte, stats = freq_arrays(train_ds.images, test_ds.images)
    net = build_model(ModelSpec("freq", 192, train_ds.k, gated=True, seed=seed))
    res = train(net, xtr, train_ds.labels, cfg)
    ev = evaluate(net, xte, test_ds.labels, mode="sample", seed=cfg.seed, tau=cfg.tau_at(cfg.epochs - 1))
    hm = heatmap_aggregate(ev.decisions)
    freq = hm.flat()
    sig = np.zeros(192, dtype=bool)
    sig[train_ds.signature_flat()] = True
    return GateRun(net, hm, float(freq[sig].mean()), float(freq[~sig].mean()), res, stats,
                   mean_on_probability(net, xte), ev.accuracy)


def prune_and_retrain(train_ds, test_ds, scores, cfg, k=24, seed=0):
    """Accuracy of freqnet on all 192 channels vs on the ``k`` highest-scoring channels.

    ``scores`` is a HeatMap or any length-192 per-channel selection score.
    """
    full = SelectionMask.all_pass()
    flat = scores.flat() if isinstance(scores, HeatMap) else np.asarray(scores)
    top = top_k_mask(flat, k)
    out = {}
    for name, mask in (("full", full), ("top", top)):
        xtr, xte, _ = freq_arrays(train_ds.images, test_ds.images, mask)
        net = build_model(ModelSpec("freq", len(mask), train_ds.k, seed=seed))
        train(net, xtr, train_ds.labels, cfg)
        out[name] = evaluate(net, xte, test_ds.labels).accuracy
    return out["full"], out["top"], top
