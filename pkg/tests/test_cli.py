import numpy as np
import pytest

from freqsel import cli, codec, dataio
from freqsel.select import list_mask


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--k", 2, "--n", 6, "--size", 32, "--seed", 1, "--out-dir", out) == 0
    return out


def test_mask_named(tmp_path):
    assert run("mask", "--name", "DCT-24S", "--out", tmp_path / "m.txt") == 0
    assert len(list_mask((tmp_path / "m.txt").read_text())) == 24


def test_mask_square_and_triangle(tmp_path):
    assert run("mask", "--square", "4,1,1", "--out", tmp_path / "s.txt") == 0
    assert list_mask((tmp_path / "s.txt").read_text()).y == (0, 1, 8, 9)
    assert run("mask", "--triangle", "3,0,0", "--out", tmp_path / "t.txt") == 0
    assert list_mask((tmp_path / "t.txt").read_text()).y == (0, 1, 8)


def test_encode_with_mask(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
    (tmp_path / "a.ppm").write_bytes(dataio.ppm_write(img))
    run("mask", "--name", "DCT-24S", "--out", tmp_path / "m.txt")
    assert run("encode", "--in", tmp_path / "a.ppm", "--mask", tmp_path / "m.txt",
               "--out", tmp_path / "a.fdt") == 0
    t = dataio.tensor_read((tmp_path / "a.fdt").read_bytes())
    assert t.shape == (8, 8, 24)


def test_stats_and_standardized_encode(tmp_path, data_dir):
    assert run("stats", "--data", data_dir / "manifest.txt", "--out", tmp_path / "s.txt") == 0
    stats = codec.ChannelStats.loads((tmp_path / "s.txt").read_text())
    ds = dataio.read_dataset(data_dir / "manifest.txt")
    ppm = data_dir / ds.samples[0][0]
    assert run("encode", "--in", ppm, "--stats", tmp_path / "s.txt", "--out", tmp_path / "z.fdt") == 0
    t = dataio.tensor_read((tmp_path / "z.fdt").read_bytes())
    expect = stats.standardize(codec.encode_image(ds.images[0]))
    assert np.allclose(t, expect, rtol=1e-6, atol=1e-5)


def test_train_heatmap_and_determinism(tmp_path, data_dir):
    args = ["train", "--model", "freq", "--gate", "on", "--data", data_dir / "manifest.txt",
            "--epochs", 2, "--batch-size", 4, "--seed", 3]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert run("heatmap", "--ckpt", tmp_path / "a", "--data", data_dir / "manifest.txt",
               "--out-prefix", tmp_path / "hm") == 0
    assert (tmp_path / "hm.csv").exists() and (tmp_path / "hm_CR.pgm").exists()


def test_train_spatial(tmp_path, data_dir):
    assert run("train", "--model", "spatial", "--data", data_dir / "manifest.txt",
               "--epochs", 1, "--out", tmp_path / "s") == 0
    assert (tmp_path / "s" / "metrics.csv").read_text().startswith("epoch,split,loss")


@pytest.mark.parametrize("argv", [
    ["mask"],
    ["mask", "--name", "DCT-24S", "--bogus"],
    ["mask", "--name", "DCT-99S"],
    ["mask", "--square", "1,2"],
    ["train", "--model", "spatial", "--gate", "on", "--data", "x", "--out", "y"],
    ["nonsense"],
])
def test_validation_errors_exit_1(argv, tmp_path, data_dir):
    if "--data" in argv:
        argv[argv.index("--data") + 1] = str(data_dir / "manifest.txt")
        argv[argv.index("--out") + 1] = str(tmp_path / "o")
    assert run(*argv) == 1


def test_missing_file_exit_2(tmp_path):
    assert run("encode", "--in", tmp_path / "nope.ppm", "--out", tmp_path / "x.fdt") == 2


def test_help_exits_zero():
    with pytest.raises(SystemExit) as err:
        run("train", "--help")
    assert err.value.code == 0


def test_check_passes(capsys):
    assert run("check") == 0
    assert "dct definitional oracle" in capsys.readouterr().out


def test_check_detects_corrupt_dct(monkeypatch, capsys):
    broken = codec.DCT.copy()
    broken[3, 5] += 1e-3
    monkeypatch.setattr(codec, "DCT", broken)
    assert run("check") == 3
    rows = [r for r in capsys.readouterr().out.splitlines() if "FAIL" in r]
    assert any(r.startswith("dct definitional oracle") for r in rows)
