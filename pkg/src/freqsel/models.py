"""Desk-scale frequency-input and spatial-input classifiers and their training loop.

The frequency network consumes the (H/8) x (W/8) x C' channel tensor
directly: the stride-2 stem a spatial network needs to get from H x W down
to that resolution is simply absent, and the first convolution is widened to
take C' input channels.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gate as gt
from . import rng as _rng
from .errors import ConfigError, ShapeError, TrainingError


@dataclass
class ModelSpec:
    kind: str                      # "freq" or "spatial"
    in_channels: int
    num_classes: int
    width: int = 32
    stem_width: int = 16
    gated: bool = False
    reduction: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("freq", "spatial"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if min(self.in_channels, self.num_classes, self.width, self.stem_width) < 1:
            raise ConfigError("widths and class count must be positive")
        if self.gated and self.kind != "freq":
            raise ConfigError("the gate attaches to frequency-domain inputs only")


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 4e-5
    epochs: int = 40
    batch_size: int = 32
    lr_decay: float = 0.1
    decay_interval: int = 20
    lam: float = 0.1
    lam_warmup: int = 0            # epochs trained with the selection regularizer switched off
    gate_lr_scale: float = 1.0     # gate parameters step at lr * gate_lr_scale
    tau: float = 1.0
    tau_final: float = None        # exponential anneal target; None keeps tau fixed
    eval_mode: str = "sample"
    seed: int = 0

    def lr_at(self, epoch):
        return self.lr * self.lr_decay ** (epoch // self.decay_interval)

    def lam_at(self, epoch):
        return 0.0 if epoch < self.lam_warmup else self.lam

    def tau_at(self, epoch):
        if self.tau_final is None or self.epochs <= 1:
            return self.tau
        frac = epoch / (self.epochs - 1)
        return self.tau * (self.tau_final / self.tau) ** frac


class Model:
    """Parameters plus a forward function producing logits for a batch."""

    def __init__(self, spec):
        self.spec = spec
        gen = _rng.stream(spec.seed, "init")
        self.params = self._init(gen)

    def parameter_count(self):
        return sum(p.data.size for name, p in self.params.items() if not name.startswith("gate."))

    def state(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state):
        for name, p in self.params.items():
            if state[name].shape != p.data.shape:
                raise ShapeError(f"checkpoint shape mismatch for {name}")
            p.data = np.asarray(state[name], dtype=np.float64).copy()


class FreqNet(Model):
    """[gate] -> conv3x3(C'->w) -> relu -> conv3x3(w->w) -> relu -> GAP -> dense(w->K)."""

    def _init(self, gen):
        s = self.spec
        params = {
            "conv1.w": ad.conv_param(gen, 3, s.in_channels, s.width),
            "conv1.b": ad.zeros_param(s.width),
            "conv2.w": ad.conv_param(gen, 3, s.width, s.width),
            "conv2.b": ad.zeros_param(s.width),
            "fc.w": ad.dense_param(gen, s.width, s.num_classes),
            "fc.b": ad.zeros_param(s.num_classes),
        }
        if s.gated:
            params.update(gt.init_gate_params(gen, s.in_channels, s.reduction))
        return params

    def forward(self, params, x, decision=None, mode="sample", tau=1.0, gen=None,
                noise=None, hard=True, static_bits=None):
        """Return ``(logits, decision)``.

        For a gated model the decision is computed from ``x`` unless one is
        passed in. ``static_bits`` zeroes input channels outside a fixed mask.
        """
        x = ad.as_tensor(x)
        if x.shape[-1] != self.spec.in_channels:
            raise ShapeError(f"model expects {self.spec.in_channels} channels, got {x.shape[-1]}")
        if static_bits is not None:
            x = ad.mul(x, np.asarray(static_bits, dtype=np.float64))
        if self.spec.gated:
            if decision is None:
                decision = gt.gate_decide(x, params, mode=mode, tau=tau, gen=gen,
                                          noise=noise, hard=hard)
            x = gt.gate_apply(x, decision)
        h = ad.relu(ad.conv2d(x, params["conv1.w"], 1, 1, bias=params["conv1.b"]))
        h = ad.relu(ad.conv2d(h, params["conv2.w"], 1, 1, bias=params["conv2.b"]))
        logits = ad.dense(ad.global_avg_pool(h), params["fc.w"], params["fc.b"])
        return logits, decision


class SpatialNet(Model):
    """conv3x3/2(3->16) -> relu -> conv3x3/2(16->w) -> relu -> conv3x3(w->w) -> relu -> GAP -> dense."""

    def _init(self, gen):
        s = self.spec
        return {
            "conv1.w": ad.conv_param(gen, 3, s.in_channels, s.stem_width),
            "conv1.b": ad.zeros_param(s.stem_width),
            "conv2.w": ad.conv_param(gen, 3, s.stem_width, s.width),
            "conv2.b": ad.zeros_param(s.width),
            "conv3.w": ad.conv_param(gen, 3, s.width, s.width),
            "conv3.b": ad.zeros_param(s.width),
            "fc.w": ad.dense_param(gen, s.width, s.num_classes),
            "fc.b": ad.zeros_param(s.num_classes),
        }

    def forward(self, params, x, **_):
        x = ad.as_tensor(x)
        h = ad.relu(ad.conv2d(x, params["conv1.w"], 2, 1, bias=params["conv1.b"]))
        h = ad.relu(ad.conv2d(h, params["conv2.w"], 2, 1, bias=params["conv2.b"]))
        h = ad.relu(ad.conv2d(h, params["conv3.w"], 1, 1, bias=params["conv3.b"]))
        logits = ad.dense(ad.global_avg_pool(h), params["fc.w"], params["fc.b"])
        return logits, None


def build_freqnet(spec):
    if spec.kind != "freq":
        raise ConfigError("build_freqnet needs kind='freq'")
    return FreqNet(spec)


def build_spatialnet(spec):
    if spec.kind != "spatial":
        raise ConfigError("build_spatialnet needs kind='spatial'")
    return SpatialNet(spec)


def build_model(spec):
    return build_freqnet(spec) if spec.kind == "freq" else build_spatialnet(spec)


def loss_graph(model, lam=0.0, **forward_kwargs):
    """Wrap ``model`` as an autodiff Graph: (x, labels) -> xent (+ lam * sum of gate bits)."""

    def fn(params, x, labels):
        logits, decision = model.forward(params, x, **forward_kwargs)
        loss = ad.softmax_xent(logits, labels)
        if decision is not None and lam:
            loss = loss + gt.selection_regularizer(decision, lam)
        return loss

    return ad.Graph(model.params, fn)


# image utilities -----------------------------------------------------------------

def downsample2x(img):
    """2x2 box average per channel, rounded to nearest (half up)."""
    a = np.asarray(img)
    h, w = a.shape[:2]
    if h % 2 or w % 2:
        raise ShapeError("downsample2x needs even extents")
    f = a.astype(np.float64)
    s = f[0::2, 0::2] + f[1::2, 0::2] + f[0::2, 1::2] + f[1::2, 1::2]
    return np.floor(s / 4.0 + 0.5).astype(np.uint8)


def upsample2x(img):
    """Nearest-neighbour 2x enlargement (pixel replication)."""
    return np.repeat(np.repeat(np.asarray(img), 2, axis=0), 2, axis=1)


def spatial_input(img):
    return (np.asarray(img, dtype=np.float64) - 128.0) / 64.0


# training ------------------------------------------------------------------------

@dataclass
class TrainResult:
    metrics: list = field(default_factory=list)   # dict rows, see METRIC_FIELDS
    initial_state: dict = None
    final_state: dict = None


METRIC_FIELDS = ("epoch", "split", "loss", "accuracy", "mean_channels_on", "lr")

EVAL_NOISE_OFFSET = 1 << 40


def metrics_csv(rows):
    out = [",".join(METRIC_FIELDS)]
    for r in rows:
        out.append(",".join(r[f] if isinstance(r[f], str) else repr(r[f]) for f in METRIC_FIELDS))
    return "\n".join(out) + "\n"


def train(model, x, y, cfg, val=None, log=None):
    """Minibatch SGD with momentum and weight decay; returns a TrainResult.

    ``x`` is an N x H x W x C array of prepared inputs and ``y`` N labels;
    ``val`` an optional (x, y) pair scored after every epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0 or len(x) != len(y):
        raise ConfigError("training data must be nonempty with one label per sample")
    if np.any(y < 0) or np.any(y >= model.spec.num_classes):
        raise ConfigError("labels outside the model's class range")
    gated = getattr(model.spec, "gated", False)
    opt = ad.SGD(cfg.lr, cfg.momentum, cfg.weight_decay,
                 lr_scale={k: cfg.gate_lr_scale for k in model.params if k.startswith("gate.")})
    result = TrainResult(initial_state=model.state())
    n = len(x)
    step = 0
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        tau = cfg.tau_at(epoch)
        lam = cfg.lam_at(epoch)
        order = _rng.stream(cfg.seed, "shuffle", epoch).permutation(n)
        tot_loss = tot_correct = tot_on = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            ad.zero_grad(model.params.values())
            kwargs = {}
            if gated:
                kwargs = {"tau": tau, "gen": _rng.stream(cfg.seed, "gumbel", step)}
            logits, decision = model.forward(model.params, xb, **kwargs)
            loss = ad.softmax_xent(logits, yb)
            if decision is not None:
                loss = loss + gt.selection_regularizer(decision, lam)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError("non-finite loss", epoch=epoch, batch=b)
            names = list(model.params)
            grads = ad.backward(loss, [model.params[k] for k in names])
            opt.step(model.params, dict(zip(names, grads)))
            step += 1
            tot_loss += value * len(idx)
            tot_correct += float((logits.data.argmax(axis=1) == yb).sum())
            tot_on += float(decision.bits.sum()) if decision is not None else model.spec.in_channels * len(idx)
        result.metrics.append({
            "epoch": epoch, "split": "train", "loss": tot_loss / n,
            "accuracy": tot_correct / n, "mean_channels_on": tot_on / n, "lr": opt.lr})
        if val is not None:
            ev = evaluate(model, val[0], val[1], mode=cfg.eval_mode, seed=cfg.seed,
                          tau=tau, lam=lam)
            result.metrics.append({
                "epoch": epoch, "split": "val", "loss": ev.loss, "accuracy": ev.accuracy,
                "mean_channels_on": ev.mean_channels_on, "lr": opt.lr})
        if log is not None:
            log(result.metrics[-1])
    result.final_state = model.state()
    return result


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    mean_channels_on: float
    decisions: np.ndarray      # N x C hard bits actually applied to the input
    logits: np.ndarray


def evaluate(model, x, y, mode="sample", seed=0, tau=1.0, lam=0.0, static_bits=None,
             batch_size=256):
    """Top-1 accuracy, mean loss, and per-sample channel decisions.

    Gated models draw fresh Gumbel noise per sample (``mode="sample"``) from
    a stream indexed by sample position, or threshold on-probabilities at 0.5
    (``mode="threshold"``). ``static_bits`` applies a fixed channel mask.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= model.spec.num_classes):
        raise ConfigError("labels outside the model's class range")
    gated = getattr(model.spec, "gated", False)
    c = model.spec.in_channels
    all_logits, all_bits = [], []
    loss_sum = 0.0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        noise = None
        if gated and mode == "sample":
            noise = np.stack([gt.gumbel_standard(_rng.stream(seed, "gumbel", EVAL_NOISE_OFFSET + start + i),
                                                 (2, c)) for i in range(len(xb))], axis=1)
        logits, decision = model.forward(model.params, xb, mode=mode, tau=tau, noise=noise,
                                         static_bits=static_bits)
        loss = float(ad.softmax_xent(logits, yb).data) * len(xb)
        if decision is not None:
            bits = decision.bits
            loss += lam * float(bits.sum())
        elif static_bits is not None:
            bits = np.broadcast_to(np.asarray(static_bits, dtype=np.float64), (len(xb), c))
        else:
            bits = np.ones((len(xb), c))
        loss_sum += loss
        all_logits.append(logits.data)
        all_bits.append(bits)
    logits = np.concatenate(all_logits)
    bits = np.concatenate(all_bits)
    return EvalResult(
        accuracy=float((logits.argmax(axis=1) == y).mean()),
        loss=loss_sum / len(x),
        mean_channels_on=float(bits.sum(axis=1).mean()),
        decisions=bits,
        logits=logits,
    )
