import csv
import io

import numpy as np
import pytest

from semjpeg.cli import main
from semjpeg.jpeg import decode, encode
from semjpeg.msroi import ClassMergeTable, MSROINet, NetworkSpec, train
from semjpeg.netpbm import load_saliency, save_pgm, save_ppm, save_saliency
from semjpeg.semantic import QualityLadder, final_encode, semantic_compress
from semjpeg.synthetic import SyntheticSpec, default_merge_table, make_synthetic_dataset
from corpus import centred_map, natural_corpus


@pytest.fixture()
def scene(tmp_path):
    _, img = natural_corpus()[0]
    img = np.ascontiguousarray(img[32:128, 16:144])
    save_ppm(tmp_path / "in.ppm", img)
    save_saliency(tmp_path / "ones.pgm", np.ones(img.shape[:2]))
    save_saliency(tmp_path / "centre.pgm", centred_map(*img.shape[:2]))
    return tmp_path, img


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_compress_all_ones_map_equals_single_level(scene):
    tmp, img = scene
    assert main(["compress", str(tmp / "in.ppm"), "--map", str(tmp / "ones.pgm"), "--out", str(tmp / "o.jpg")]) == 0
    target = len(encode(img, 50))
    want = final_encode(decode(encode(img, 70)), target, 0.01).stream
    assert (tmp / "o.jpg").read_bytes() == want


def test_compress_flags_match_library_call(scene):
    tmp, img = scene
    args = ["compress", str(tmp / "in.ppm"), "--map", str(tmp / "centre.pgm"), "--out", str(tmp / "o.jpg"),
            "--ql", "20", "--qh", "80", "--levels", "3", "--size-target", "3000", "--tolerance", "0.05"]
    assert main(args) == 0
    want = semantic_compress(img, load_saliency(tmp / "centre.pgm"), QualityLadder(20, 80, 3), 3000, 0.05)
    assert (tmp / "o.jpg").read_bytes() == want.stream


def test_evaluate_identical_files(scene, capsys):
    tmp, _ = scene
    out = tmp / "m.csv"
    assert main(["evaluate", str(tmp / "in.ppm"), str(tmp / "in.ppm"), "--map", str(tmp / "centre.pgm"),
                 "--out", str(out)]) == 0
    table = rows(out.read_text())
    assert len(table) == 1
    assert table[0]["psnr"] == "inf" and table[0]["psnr_s"] == "inf" and table[0]["ssim"] == "1.000000"
    assert capsys.readouterr().out == out.read_text()


def test_evaluate_jpeg_adds_size_matched_standard_row(scene, capsys):
    tmp, img = scene
    (tmp / "c.jpg").write_bytes(encode(img, 60))
    assert main(["evaluate", str(tmp / "in.ppm"), str(tmp / "c.jpg")]) == 0
    table = rows(capsys.readouterr().out)
    assert [r["id"] for r in table] == ["c", "standard"]
    assert table[0]["bytes"] == str(len(encode(img, 60)))
    assert abs(int(table[1]["bytes"]) - int(table[0]["bytes"])) <= 0.01 * int(table[0]["bytes"])


def test_sweep_rows_and_monotone_bytes(scene):
    tmp, _ = scene
    _, big = natural_corpus()[1]
    save_ppm(tmp / "big.ppm", big)
    save_saliency(tmp / "big.pgm", centred_map(*big.shape[:2]))
    out = tmp / "sweep.csv"
    assert main(["sweep", str(tmp / "big.ppm"), "--map", str(tmp / "big.pgm"),
                 "--sizes", "256,192,128,96", "--out", str(out)]) == 0
    table = rows(out.read_text())
    assert [r["id"] for r in table] == ["256x256", "192x192", "128x128", "96x96"]
    sizes = [int(r["bytes"]) for r in table]
    assert sizes == sorted(sizes, reverse=True)
    assert table[0]["d_msssim"] != "na" and table[-1]["d_msssim"] == "na"


def test_synth_then_benchmark(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--count", "3", "--size", "64", "--seed", "2"]) == 0
    assert len(list(data.glob("*.ppm"))) == 3 and len(list((data / "maps").glob("*.pgm"))) == 3
    assert len((data / "labels.txt").read_text().splitlines()) == 3
    out = tmp_path / "out"
    assert main(["benchmark", "--dataset", str(data), "--maps", str(data / "maps"), "--out", str(out)]) == 0
    table = rows((out / "results.csv").read_text())
    assert len(table) == 6 and {r["arm"] for r in table} == {"standard", "semantic"}
    assert len(list(out.glob("*.jpg"))) == 6
    assert "images 3 ok 3 failed 0" in capsys.readouterr().out


def test_benchmark_exit_code_on_partial_failure(tmp_path):
    data = tmp_path / "data"
    main(["synth", "--out", str(data), "--count", "2", "--size", "64"])
    (data / "maps" / "synth0001.pgm").unlink()
    out = tmp_path / "out"
    assert main(["benchmark", "--dataset", str(data), "--maps", str(data / "maps"), "--out", str(out),
                 "--no-streams"]) == 1
    text = (out / "results.csv").read_text()
    assert "synth0000,standard" in text and "synth0001,error" in text
    assert not list(out.glob("*.jpg"))


@pytest.mark.parametrize("make_bad", ["missing", "bad_ppm", "map_size"])
def test_errors_exit_one_without_partial_output(scene, capsys, make_bad):
    tmp, img = scene
    src, mp = tmp / "in.ppm", tmp / "centre.pgm"
    if make_bad == "missing":
        src = tmp / "nope.ppm"
    elif make_bad == "bad_ppm":
        src = tmp / "bad.ppm"
        src.write_bytes(b"P6 4 4 255\n" + bytes(5))
    else:
        mp = tmp / "small.pgm"
        save_pgm(mp, np.zeros((8, 8), np.uint8))
    assert main(["compress", str(src), "--map", str(mp), "--out", str(tmp / "o.jpg")]) == 1
    assert "semjpeg compress: error:" in capsys.readouterr().err
    assert not (tmp / "o.jpg").exists()
    assert not [p for p in tmp.iterdir() if p.name.startswith(".")]


def test_map_command_writes_pgm_from_checkpoint(scene, tmp_path):
    tmp, img = scene
    ckpt = tmp_path / "net.ckpt"
    MSROINet(NetworkSpec(categories=6), seed=0).save(ckpt)
    assert main(["map", str(tmp / "in.ppm"), "--checkpoint", str(ckpt), "--out", str(tmp / "m.pgm")]) == 0
    sal = load_saliency(tmp / "m.pgm")
    assert sal.shape == img.shape[:2] and sal.min() >= 0 and sal.max() <= 1


def test_training_command_writes_checkpoint(tmp_path, capsys):
    out = tmp_path / "t.ckpt"
    assert main(["train", "--out", str(out), "--count", "8", "--size", "32", "--epochs", "1",
                 "--batch-size", "4"]) == 0
    assert "epoch 0 loss" in capsys.readouterr().out
    assert MSROINet.load(out).spec.categories == 6


def test_training_continues_from_checkpoint_with_fixed_object_size(tmp_path, capsys):
    first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    common = ["--count", "4", "--epochs", "1", "--batch-size", "4"]
    assert main(["train", "--out", str(first), "--size", "32", *common]) == 0
    assert main(["train", "--out", str(second), "--size", "128", "--init", str(first),
                 "--keep-object-size", "--data-seed", "7", *common]) == 0
    data = make_synthetic_dataset(SyntheticSpec(count=4, size=128, seed=7, radius=(0.11 / 2, 0.19 / 2)))
    net = MSROINet.load(first)
    train(net, data.images, data.labels, ClassMergeTable(default_merge_table()),
          epochs=1, lr=1e-3, seed=0, batch_size=4, optimizer="adam")
    for a, b in zip(net.params, MSROINet.load(second).params):
        np.testing.assert_array_equal(a.kernel, b.kernel)
