"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL ...`` line to the terminal.
The training experiments (6-8) take several minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from freqsel import autodiff as ad
from freqsel import cli, codec, dataio, rng
from freqsel import gate as gt
from freqsel.experiments import freq_vs_spatial, gate_salience, prune_and_retrain, split_dataset
from freqsel.models import ModelSpec, TrainConfig, build_model, loss_graph
from freqsel.select import named_mask, square_mask, triangle_mask


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def definitional_dct(blocks):
    """The four-index definition sum_{i,j} a_u a_v cos(.) cos(.) (x_ij - 128), as one tensor contraction."""
    k = np.arange(8)
    cos = np.cos((2 * k[None, :] + 1) * k[:, None] * math.pi / 16)    # [u, i]
    a = np.where(k == 0, math.sqrt(1 / 8), math.sqrt(2 / 8))
    basis = np.einsum("u,v,ui,vj->uvij", a, a, cos, cos)
    return np.einsum("uvij,nij->nuv", basis, blocks - 128.0)


def test_definitional_dct_matches_loop_oracle():
    blocks = np.random.default_rng(0).uniform(0, 255, size=(5, 8, 8))
    for b, d in zip(blocks, definitional_dct(blocks)):
        assert np.max(np.abs(d - codec.dct8x8_naive(b))) < 1e-10


def seeded_blocks():
    return rng.uniform(rng.stream(0, "check", 1), (1000, 8, 8)) * 255.0


def test_1_dct_correctness(report):
    blocks = seeded_blocks()
    t0 = time.perf_counter()
    err = np.max(np.abs(codec.dct8x8(blocks) - definitional_dct(blocks)))
    dt = time.perf_counter() - t0
    report(1, err < 1e-9 and dt < 1.0, f"max abs err {err:.2e} (<1e-9), {dt:.3f}s (<1s)")


def test_2_parseval(report):
    blocks = seeded_blocks()
    c = codec.dct8x8(blocks)
    gap = np.max(np.abs((c ** 2).sum(axis=(1, 2)) - ((blocks - 128) ** 2).sum(axis=(1, 2))))
    inv = np.max(np.abs(codec.idct8x8(c) - blocks))
    report(2, gap < 1e-9 and inv < 1e-10, f"energy gap {gap:.2e} (<1e-9), inverse err {inv:.2e} (<1e-10)")


def test_3_codec_round_trip(report):
    gen = rng.stream(0, "data", 99)
    files = [dataio.ppm_write(gen.integers(0, 256, size=(64, 64, 3)).astype(np.uint8)) for _ in range(100)]
    t0 = time.perf_counter()
    worst = 0
    for data in files:
        img = dataio.ppm_read(data)
        back = codec.decode_tensor(codec.encode_image(img)).astype(int)
        worst = max(worst, int(np.max(np.abs(back - img))))
    dt = time.perf_counter() - t0
    report(3, worst <= 2 and dt < 5.0, f"max 8-bit error {worst} (<=2), {dt:.2f}s (<5s)")


def test_4_gradient_correctness(report):
    t0 = time.perf_counter()
    gen = rng.stream(0, "check", 10)
    labels = np.array([1, 3])
    reports = {}
    fnet = build_model(ModelSpec("freq", 24, 4, seed=1))
    reports["freqnet"] = ad.grad_check(loss_graph(fnet), rng.normal(gen, (2, 8, 8, 24)), labels,
                                       max_entries=20)
    snet = build_model(ModelSpec("spatial", 3, 4, seed=2))
    reports["spatialnet"] = ad.grad_check(loss_graph(snet), rng.normal(gen, (2, 32, 32, 3)), labels,
                                          max_entries=20)
    gnet = build_model(ModelSpec("freq", 192, 4, gated=True, seed=3))
    # at init b1 = 0 can kill the hidden units and alpha = beta pins p at 1/2 whatever e is,
    # which would zero every gradient on the squeeze-excitation path
    for k in ("gate.b1", "gate.alpha", "gate.beta"):
        gnet.params[k].data = rng.normal(gen, gnet.params[k].shape)
    noise = gt.gumbel_standard(rng.stream(0, "gumbel"), (2, 2, 192))
    reports["gated freqnet"] = ad.grad_check(loss_graph(gnet, lam=0.1, noise=noise, hard=False),
                                             rng.normal(gen, (2, 8, 8, 192)), labels, max_entries=20)
    dt = time.perf_counter() - t0
    worst = max(r.max_error for r in reports.values())
    detail = ", ".join(f"{k} {r.max_error:.1e} (entry max {r.max_entry_error:.1e}, "
                       f"{r.skipped} kink-skipped)" for k, r in reports.items())
    report(4, worst < 1e-5 and dt < 60, f"per-parameter rel err {detail} (<1e-5), {dt:.1f}s (<60s)")


def test_5_gate_probability_law(report):
    n = 100_000

    def off_rate(off, on, seed):
        d = gt.gate_sample(np.full(n, off), np.full(n, on), 1.0, gen=rng.stream(seed, "gumbel"))
        return 1.0 - d.bits.mean()

    a, b = off_rate(7.5, 2.5, 1), off_rate(4.0, 4.0, 2)
    ok = abs(a - 0.75) <= 0.01 and abs(b - 0.5) <= 0.01
    report(5, ok, f"off-rate (7.5,2.5) {a:.4f} (0.75±0.01), equal {b:.4f} (0.50±0.01)")


def test_6_frequency_vs_spatial(report):
    t0 = time.perf_counter()
    _, train_ds, test_ds = split_dataset(k=4, n_train=500, n_test=200, regime="high_only", seed=0)
    cmp = freq_vs_spatial(train_ds, test_ds, TrainConfig(epochs=40), seed=0)
    dt = time.perf_counter() - t0
    ok = cmp.freq_accuracy >= 0.90 and cmp.spatial_accuracy <= 0.40 and cmp.gap >= 0.40 and dt < 600
    report(6, ok, f"freqnet {cmp.freq_accuracy:.3f} (>=0.90), spatialnet {cmp.spatial_accuracy:.3f} "
                  f"(<=0.40), gap {cmp.gap:.3f} (>=0.40), {dt:.0f}s (<600s)")


@pytest.fixture(scope="module")
def anywhere():
    _, train_ds, test_ds = split_dataset(k=4, n_train=200, n_test=100, regime="anywhere", seed=0)
    return train_ds, test_ds


@pytest.fixture(scope="module")
def gate_run(anywhere):
    return gate_salience(*anywhere, TrainConfig(epochs=40, lam=0.1), seed=0)


def test_7_gate_salience(report, gate_run):
    r = gate_run
    ok = r.signature_rate >= 2 * r.other_rate and r.signature_rate > 0
    report(7, ok, f"heat-map mean: signature {r.signature_rate:.3e}, other {r.other_rate:.3e}, "
                  f"ratio {r.ratio:.2f} (>=2); test accuracy {r.accuracy:.3f}")


def test_8_pruning(report, anywhere, gate_run):
    full, top, mask = prune_and_retrain(*anywhere, gate_run.mean_probs, TrainConfig(epochs=40), k=24)
    sig = set(anywhere[0].signature_flat())
    kept = len(sig & set(mask.flat_indices().tolist()))
    report(8, full - top <= 0.01, f"192-channel {full:.3f}, top-24 {top:.3f}, loss {100 * (full - top):.1f} "
                                  f"points (<=1); {kept}/{len(sig)} signature channels kept")


def test_9_static_masks(report):
    splits = {n: named_mask(f"DCT-{n}S") for n in (24, 48, 64)}
    ok = all(len(m) == n for n, m in splits.items())
    ok &= [m.counts for m in splits.values()] == [(14, 5, 5), (32, 8, 8), (44, 10, 10)]
    for fn in (square_mask, triangle_mask):
        prev = [set(), set(), set()]
        for k in range(1, 65):
            comps = [set(c) for c in fn(k, k, k).components()]
            ok &= all(p <= c and len(c) == k and 0 in c for p, c in zip(prev, comps))
            prev = comps
    report(9, ok, "sizes/splits " + ", ".join(f"{n}:{m.counts}" for n, m in splits.items())
           + "; nesting and DC membership k=1..64")


def test_10_determinism(report, tmp_path):
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--k", "3", "--n", "8", "--size", "32", "--seed", "4",
                     "--out-dir", str(data)]) == 0
    runs = {
        "gated freq": ["--model", "freq", "--gate", "on"],
        "masked freq": ["--model", "freq", "--mask", "DCT-24T"],
        "spatial": ["--model", "spatial"],
    }
    mismatched = []
    for name, extra in runs.items():
        outs = []
        for rep in range(2):
            out = tmp_path / f"{name.replace(' ', '_')}{rep}"
            argv = ["train", "--data", str(data / "manifest.txt"), "--epochs", "3", "--batch-size", "8",
                    "--seed", "11", "--out", str(out), *extra]
            assert cli.main(argv) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1]:
            mismatched.append(name)
    report(10, not mismatched, f"{len(runs)} train configurations repeated; byte-identical checkpoints "
                               f"and metrics" + (f"; mismatched: {mismatched}" if mismatched else ""))
