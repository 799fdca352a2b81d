"""Self-test suite behind ``freqsel check``: oracles and invariants on the installed build."""

import time

import numpy as np

from . import autodiff as ad
from . import codec
from . import gate as gt
from . import rng
from .models import ModelSpec, build_model, loss_graph


def check_dct_oracle():
    blocks = rng.uniform(rng.stream(0, "check", 1), (1000, 8, 8)) * 255.0
    fast = codec.dct8x8(blocks)
    err = max(np.max(np.abs(f - codec.dct8x8_naive(b))) for b, f in zip(blocks, fast))
    return err < 1e-9, f"max abs err {err:.3g}"


def check_parseval():
    blocks = rng.uniform(rng.stream(0, "check", 1), (1000, 8, 8)) * 255.0
    c = codec.dct8x8(blocks)
    energy = np.max(np.abs((c ** 2).sum(axis=(1, 2)) - ((blocks - 128) ** 2).sum(axis=(1, 2))))
    inv = np.max(np.abs(codec.idct8x8(c) - blocks))
    return energy < 1e-9 * 64 * 128 ** 2 and inv < 1e-10, f"energy gap {energy:.3g}, inverse err {inv:.3g}"


def check_round_trip():
    gen = rng.stream(0, "check", 2)
    worst = 0
    for _ in range(20):
        img = gen.integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
        back = codec.decode_tensor(codec.encode_image(img)).astype(int)
        worst = max(worst, int(np.max(np.abs(back - img))))
    return worst <= 2, f"max 8-bit error {worst}"


def check_pack_bijection():
    plane = rng.normal(rng.stream(0, "check", 3), (32, 40))
    blocks = codec.to_blocks(plane)
    t = codec.pack_channels(blocks)
    ok = (np.array_equal(codec.unpack_channels(t), blocks)
          and np.array_equal(codec.from_blocks(codec.unpack_channels(t)), plane))
    return ok, "pack/unpack exact" if ok else "pack/unpack mismatch"


def _probe(graph, *args, **kw):
    return ad.grad_check(graph, *args, max_entries=12, **kw).max_error


def check_gradients():
    gen = rng.stream(0, "check", 4)
    labels = np.array([0, 2])
    worst = {}
    fnet = build_model(ModelSpec("freq", 12, 3, width=6, seed=1))
    worst["freqnet"] = _probe(loss_graph(fnet), rng.normal(gen, (2, 4, 4, 12)), labels)
    snet = build_model(ModelSpec("spatial", 3, 3, width=6, stem_width=4, seed=2))
    worst["spatialnet"] = _probe(loss_graph(snet), rng.normal(gen, (2, 8, 8, 3)), labels)
    gnet = build_model(ModelSpec("freq", 16, 3, width=6, gated=True, reduction=4, seed=3))
    # at init b1 = 0 can leave the hidden units dead and alpha = beta makes p independent
    # of the excitation, so the probe would be vacuous
    for k in ("gate.b1", "gate.alpha", "gate.beta"):
        gnet.params[k].data = rng.normal(gen, gnet.params[k].shape)
    noise = gt.gumbel_standard(rng.stream(0, "gumbel"), (2, 2, 16))
    worst["gated"] = _probe(loss_graph(gnet, lam=0.1, noise=noise, hard=False),
                            rng.normal(gen, (2, 4, 4, 16)), labels)
    m = max(worst.values())
    return m < 1e-5, ", ".join(f"{k} {v:.2g}" for k, v in worst.items())


def check_gumbel_frequency():
    n = 100_000
    d = gt.gate_sample(np.full(n, 7.5), np.full(n, 2.5), 1.0, gen=rng.stream(0, "check", 5))
    off = 1.0 - d.bits.mean()
    return abs(off - 0.75) < 0.01, f"off-rate {off:.4f} (want 0.75)"


CHECKS = [
    ("dct definitional oracle", check_dct_oracle),
    ("parseval / inverse", check_parseval),
    ("pipeline round trip", check_round_trip),
    ("pack bijection", check_pack_bijection),
    ("gradient checks", check_gradients),
    ("gumbel frequency", check_gumbel_frequency),
]


def run_checks(out=print):
    """Run every check, print a table, and return True iff all pass."""
    all_ok = True
    out(f"{'check':<26} {'result':<6} {'seconds':>7}  detail")
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok = bool(ok)
        all_ok &= ok
        out(f"{name:<26} {'PASS' if ok else 'FAIL':<6} {time.perf_counter() - t0:>7.2f}  {detail}")
    return all_ok
