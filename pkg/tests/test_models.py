import numpy as np
import pytest

from freqsel import gate as gt
from freqsel import rng
from freqsel.checkpoint import load_checkpoint, round_to_disk, save_checkpoint
from freqsel.errors import ConfigError, ShapeError, TrainingError
from freqsel.models import (ModelSpec, TrainConfig, build_freqnet, build_model, build_spatialnet,
                            downsample2x, evaluate, metrics_csv, train, upsample2x)
from freqsel.select import SelectionMask, named_mask


def freq(c=24, k=4, **kw):
    return build_freqnet(ModelSpec("freq", c, k, **kw))


class TestArchitecture:
    def test_logits_shape(self):
        logits, _ = freq().forward(freq().params, np.zeros((8, 8, 24)))
        assert logits.shape == (4,)

    def test_parameter_count(self):
        # 24*9*32+32 + 32*9*32+32 + 32*4+4
        assert freq().parameter_count() == 6944 + 9248 + 132

    def test_spatial_shapes(self):
        net = build_spatialnet(ModelSpec("spatial", 3, 4))
        logits, _ = net.forward(net.params, np.zeros((2, 32, 32, 3)))
        assert logits.shape == (2, 4)
        from freqsel import autodiff as ad
        h = ad.conv2d(np.zeros((32, 32, 3)), net.params["conv1.w"], 2, 1)
        assert h.shape[:2] == (16, 16)
        assert ad.conv2d(h, net.params["conv2.w"], 2, 1).shape[:2] == (8, 8)

    def test_spatial_capacity(self):
        s = build_spatialnet(ModelSpec("spatial", 3, 4)).parameter_count()
        f = freq().parameter_count()
        assert abs(s - f) <= 0.25 * f

    def test_gate_excluded_from_count(self):
        assert freq(gated=True).parameter_count() == freq().parameter_count()

    @pytest.mark.parametrize("kw", [dict(kind="rgb", in_channels=3, num_classes=4),
                                    dict(kind="freq", in_channels=0, num_classes=4),
                                    dict(kind="spatial", in_channels=3, num_classes=4, gated=True)])
    def test_invalid_spec(self, kw):
        with pytest.raises(ConfigError):
            ModelSpec(**kw)

    def test_builder_kind_check(self):
        with pytest.raises(ConfigError):
            build_freqnet(ModelSpec("spatial", 3, 4))

    def test_channel_mismatch(self):
        net = freq()
        with pytest.raises(ShapeError):
            net.forward(net.params, np.zeros((8, 8, 20)))


class TestGateEquivalences:
    def setup_method(self):
        self.x = np.random.default_rng(0).normal(size=(3, 8, 8, 24))

    def test_all_on_equals_ungated(self):
        plain = freq(seed=5)
        gated = freq(gated=True, seed=5)
        for k in plain.params:
            gated.params[k].data = plain.params[k].data.copy()
        a, _ = plain.forward(plain.params, self.x)
        b, _ = gated.forward(gated.params, self.x, decision=gt.fixed_decision(np.ones((3, 24))))
        assert np.max(np.abs(a.data - b.data)) < 1e-12

    def test_all_off_is_bias_only(self):
        gated = freq(gated=True, seed=2)
        gated.params["conv1.b"].data = np.random.default_rng(1).normal(size=32)
        a, _ = gated.forward(gated.params, self.x, decision=gt.fixed_decision(np.zeros((3, 24))))
        b, _ = gated.forward(gated.params, np.zeros_like(self.x), decision=gt.fixed_decision(np.ones((3, 24))))
        assert np.array_equal(a.data, b.data)

    def test_pruning_equivalence(self):
        full = freq(c=192, seed=3)
        mask = named_mask("DCT-24S")
        x = np.random.default_rng(2).normal(size=(2, 8, 8, 192))
        zeroed = x.copy()
        zeroed[..., np.setdiff1d(np.arange(192), mask.flat_indices())] = 0
        a, _ = full.forward(full.params, x, static_bits=mask.bits())
        b, _ = full.forward(full.params, zeroed)
        assert np.max(np.abs(a.data - b.data)) < 1e-12


def toy_data(n=32, c=6, k=4, seed=0):
    gen = np.random.default_rng(seed)
    y = np.arange(n) % k
    x = gen.normal(size=(n, 4, 4, c)) * 0.3
    x[np.arange(n), :, :, y] += 2.0
    return x, y


class TestTraining:
    def test_zero_lr_keeps_params(self):
        x, y = toy_data()
        net = freq(c=6)
        res = train(net, x, y, TrainConfig(lr=0.0, epochs=2))
        for k in res.initial_state:
            assert np.array_equal(res.initial_state[k], res.final_state[k])

    def test_single_batch_overfit(self):
        x, y = toy_data()
        net = freq(c=6, width=16)
        res = train(net, x, y, TrainConfig(epochs=500, decay_interval=1000, weight_decay=0.0))
        assert res.metrics[-1]["loss"] < 0.01
        assert evaluate(net, x, y).accuracy == 1.0

    def test_chance_at_init(self):
        gen = np.random.default_rng(3)
        x = gen.normal(size=(2000, 2, 2, 6))
        y = np.arange(2000) % 4
        acc = evaluate(freq(c=6, seed=1), x, y).accuracy
        assert abs(acc - 0.25) <= 0.05

    def test_deterministic(self):
        x, y = toy_data(c=24)
        runs = []
        for _ in range(2):
            net = freq(gated=True, seed=4)
            res = train(net, x, y, TrainConfig(epochs=3, batch_size=8))
            runs.append((metrics_csv(res.metrics), res.final_state))
        assert runs[0][0] == runs[1][0]
        assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])

    def test_lr_schedule_in_log(self):
        x, y = toy_data(n=8)
        cfg = TrainConfig(lr=0.05, epochs=5, decay_interval=2, lr_decay=0.1)
        res = train(freq(c=6), x, y, cfg)
        assert [r["lr"] for r in res.metrics] == [0.05 * 0.1 ** (e // 2) for e in range(5)]

    def test_validation_rows(self):
        x, y = toy_data(n=8)
        res = train(freq(c=6), x, y, TrainConfig(epochs=2), val=(x, y))
        assert [r["split"] for r in res.metrics] == ["train", "val", "train", "val"]
        assert metrics_csv(res.metrics).splitlines()[0] == "epoch,split,loss,accuracy,mean_channels_on,lr"

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_aborts(self):
        x, y = toy_data(n=8)
        x[5, 0, 0, 0] = np.inf
        with pytest.raises(TrainingError) as err:
            train(freq(c=6), x, y, TrainConfig(epochs=2, batch_size=4))
        # the abort names the batch that holds sample 5 in the first shuffled epoch
        order = rng.stream(0, "shuffle", 0).permutation(8).tolist()
        assert err.value.epoch == 0 and err.value.batch == order.index(5) // 4

    def test_label_mismatch(self):
        x, y = toy_data(n=8)
        with pytest.raises(ConfigError):
            evaluate(freq(c=6, k=2), x, y)

    def test_gated_decisions_exported(self):
        x, y = toy_data(n=10, c=24)
        ev = evaluate(freq(gated=True), x, y, mode="sample")
        assert ev.decisions.shape == (10, 24)
        assert set(np.unique(ev.decisions)) <= {0.0, 1.0}


class TestResampling:
    def test_constant(self):
        img = np.full((4, 6, 3), 77, dtype=np.uint8)
        assert np.array_equal(downsample2x(img), np.full((2, 3, 3), 77))

    def test_checkerboard(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        img[0::2, 0::2] = img[1::2, 1::2] = 255
        assert np.all(downsample2x(img) == 128)

    def test_loop_oracle(self):
        img = np.random.default_rng(0).integers(0, 256, size=(10, 8, 3)).astype(np.uint8)
        out = downsample2x(img)
        for i in range(5):
            for j in range(4):
                for c in range(3):
                    s = sum(int(img[2 * i + a, 2 * j + b, c]) for a in (0, 1) for b in (0, 1))
                    assert out[i, j, c] == int(np.floor(s / 4 + 0.5))

    def test_odd(self):
        with pytest.raises(ShapeError):
            downsample2x(np.zeros((3, 4, 3)))

    def test_upsample(self):
        assert upsample2x(np.arange(4).reshape(2, 2)).tolist() == [[0, 0, 1, 1]] * 2 + [[2, 2, 3, 3]] * 2


def test_checkpoint_round_trip(tmp_path):
    net = build_model(ModelSpec("freq", 192, 4, gated=True, seed=7))
    round_to_disk(net)
    x = np.random.default_rng(0).normal(size=(2, 4, 4, 192))
    save_checkpoint(tmp_path / "ck", net, mask=SelectionMask.all_pass())
    back, stats, mask = load_checkpoint(tmp_path / "ck")
    assert back.spec == net.spec and stats is None and len(mask) == 192
    noise = gt.gumbel_standard(rng.stream(0, "gumbel"), (2, 2, 192))
    a, _ = net.forward(net.params, x, noise=noise)
    b, _ = back.forward(back.params, x, noise=noise)
    assert np.array_equal(a.data, b.data)
    roles = [line.split()[2] for line in (tmp_path / "ck" / "manifest.txt").read_text().splitlines()
             if line.startswith("PARAM")]
    assert {"weight", "bias", "gate"} == set(roles)
