"""Trainable per-channel frequency gate with Gumbel-softmax sampling.

Scores: the input is average-pooled, passed through a two-layer SE block
(C -> C/r -> C), and each excitation ``e_i`` is scaled by two per-channel
parameters to give a raw (off, on) pair, made positive with softplus. The
pair is normalized linearly, so scores (7.5, 2.5) mean the channel is off
with probability 0.75.

Sampling uses the Gumbel-max trick on the logits ``log(score)``; the
two-way softmax relaxation at temperature ``tau`` supplies the backward
pass (straight-through), while the forward pass uses the hard bit.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DomainError, ShapeError

U_LOW = 1e-20
U_HIGH = 1.0 - 1e-12


def init_gate_params(gen, channels, reduction=16):
    hidden = max(1, channels // reduction)
    return {
        "gate.w1": ad.dense_param(gen, channels, hidden),
        "gate.b1": ad.zeros_param(hidden),
        "gate.w2": ad.dense_param(gen, hidden, channels),
        "gate.b2": ad.Tensor(np.ones(channels), requires_grad=True),
        "gate.alpha": ad.Tensor(np.ones(channels), requires_grad=True),
        "gate.beta": ad.Tensor(np.ones(channels), requires_grad=True),
    }


GATE_ROLES = {
    "gate.w1": "se_weight",
    "gate.b1": "se_bias",
    "gate.w2": "se_weight",
    "gate.b2": "se_bias",
    "gate.alpha": "off_scale",
    "gate.beta": "on_scale",
}


def gate_scores(x, params):
    """Return positive (off, on) score tensors, each of shape C (or N x C)."""
    x = ad.as_tensor(x)
    channels = params["gate.alpha"].shape[0]
    if x.shape[-1] != channels:
        raise ShapeError(f"gate expects {channels} channels, input has {x.shape[-1]}")
    s = ad.global_avg_pool(x)
    hidden = ad.relu(ad.dense(s, params["gate.w1"], params["gate.b1"]))
    e = ad.dense(hidden, params["gate.w2"], params["gate.b2"])
    pi_off = ad.softplus(e * params["gate.alpha"])
    pi_on = ad.softplus(e * params["gate.beta"])
    return pi_off, pi_on


def on_probability(pi_off, pi_on):
    off = np.asarray(getattr(pi_off, "data", pi_off), dtype=np.float64)
    on = np.asarray(getattr(pi_on, "data", pi_on), dtype=np.float64)
    return on / (off + on)


def gumbel_standard(gen, size=None):
    """Standard Gumbel draws ``-log(-log U)``, U clamped away from 0 and 1."""
    u = np.clip(gen.random(size), U_LOW, U_HIGH)
    return -np.log(-np.log(u))


def gumbel_from_uniform(u):
    u = np.clip(np.asarray(u, dtype=np.float64), U_LOW, U_HIGH)
    return -np.log(-np.log(u))


@dataclass
class GateDecision:
    bits: np.ndarray       # hard 0/1 per channel
    probs: np.ndarray      # on-probability pi_on / (pi_off + pi_on)
    noise: np.ndarray      # (2, ...) Gumbel noise for (off, on); None in threshold mode
    gate: ad.Tensor        # values multiplied into the input
    soft: ad.Tensor = None  # relaxed on-probability softmax((l + g) / tau)[on]

    @property
    def channels_on(self):
        return self.bits.sum(axis=-1)


def relaxed_on(pi_off, pi_on, noise, tau):
    """Two-way Gumbel-softmax on-component, composed from closed ops.

    softmax((l+g)/tau)[on] = exp(d - softplus(d)) with d the scaled logit gap.
    """
    l_off = ad.log(pi_off) + noise[0]
    l_on = ad.log(pi_on) + noise[1]
    d = (l_on - l_off) * (1.0 / tau)
    return ad.exp(d - ad.softplus(d)), d.data


def gate_sample(pi_off, pi_on, tau, gen=None, noise=None, hard=True):
    """Draw hard gate bits; gradients flow through the relaxation.

    ``noise`` (shape ``2 x ...``) freezes the Gumbel draws; otherwise they
    come from ``gen``. With ``hard=False`` the forward pass itself uses the
    relaxation, which makes the whole graph smooth for gradient checking.
    """
    pi_off, pi_on = ad.as_tensor(pi_off), ad.as_tensor(pi_on)
    if tau <= 0:
        raise DomainError("temperature must be positive")
    if np.any(pi_off.data <= 0) or np.any(pi_on.data <= 0):
        raise DomainError("gate scores must be strictly positive")
    if noise is None:
        noise = gumbel_standard(gen, (2,) + pi_off.shape)
    soft, gap = relaxed_on(pi_off, pi_on, noise, tau)
    bits = (gap > 0).astype(np.float64)
    if hard:
        # straight-through: add's backward ignores the forward value, so the
        # node can carry the exact hard bits while passing the soft gradient
        gate = ad.add(soft, bits - soft.data)
        gate.data = bits.copy()
    else:
        gate = soft
    return GateDecision(bits, on_probability(pi_off, pi_on), noise, gate, soft)


def gate_threshold(pi_off, pi_on):
    """Deterministic inference: keep channel i iff its on-probability exceeds 0.5."""
    p = on_probability(pi_off, pi_on)
    bits = (p > 0.5).astype(np.float64)
    return GateDecision(bits, p, None, ad.Tensor(bits))


def fixed_decision(bits):
    bits = np.asarray(bits, dtype=np.float64)
    return GateDecision(bits, bits.copy(), None, ad.Tensor(bits))


def gate_decide(x, params, mode="sample", tau=1.0, gen=None, noise=None, hard=True):
    """Score ``x`` and decide with the chosen inference ``mode`` (sample | threshold)."""
    pi_off, pi_on = gate_scores(x, params)
    if mode == "sample":
        return gate_sample(pi_off, pi_on, tau, gen=gen, noise=noise, hard=hard)
    if mode == "threshold":
        return gate_threshold(pi_off, pi_on)
    raise ValueError(f"unknown gate mode {mode!r}")


def gate_apply(x, decision):
    """Multiply channel i of ``x`` by its gate value; dropped channels become exactly 0."""
    x = ad.as_tensor(x)
    g = decision.gate
    if g.shape[-1] != x.shape[-1]:
        raise ShapeError("decision and input channel counts differ")
    if x.data.ndim == 4:
        if g.data.ndim != 2 or g.shape[0] != x.shape[0]:
            raise ShapeError("batched input needs one decision row per sample")
        g = ad.reshape(g, (g.shape[0], 1, 1, g.shape[1]))
    elif g.data.ndim != 1:
        raise ShapeError("single input needs a single decision row")
    return ad.mul(x, g)


def selection_regularizer(decision, lam):
    """``lam * sum_i F(x_i)``, averaged over samples for a batched decision."""
    g = decision.gate
    n = g.shape[0] if g.data.ndim == 2 else 1
    return ad.total(g) * (lam / n)
