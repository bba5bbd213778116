import os

import pytest

from spstgcn.cli import EXIT_OK, EXIT_USER, main

TINY_MODEL = """\
data.target_frames = 16
model.init_channels = 8
model.blocks = 8/1,8/2
model.dropout = 0.0
train.batch_size = 4
"""


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def lines_with(out, prefix):
    return [line for line in out.splitlines() if line.startswith(prefix)]


@pytest.fixture
def dataset(tmp_path, capsys):
    out = tmp_path / "data"
    code, _ = run(
        capsys,
        "synth", "--out", str(out), "--samples-per-class", "2", "--eval-samples-per-class", "1",
        "--frames", "16", "--seed", "4", "--jobs", "1",
    )
    assert code == EXIT_OK
    return out


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_MODEL, encoding = "utf-8")
    return str(path)


def test_synth_writes_manifests(tmp_path, capsys):
    code, out = run(
        capsys,
        "synth", "--out", str(tmp_path), "--samples-per-class", "2", "--eval-samples-per-class", "1", "--frames", "16",
    )
    assert code == EXIT_OK
    assert "train: 6 samples, 3 classes" in out
    assert "eval: 3 samples, 3 classes" in out
    assert (tmp_path / "train_0005.skeleton").exists()
    assert len((tmp_path / "eval.tsv").read_text().splitlines()) == 3


def test_preprocess_skips_fresh_caches(dataset, tmp_path, capsys):
    cache = str(tmp_path / "cache")
    manifest = str(dataset / "train.tsv")
    code, out = run(capsys, "preprocess", manifest, "--out", cache, "--jobs", "1")
    assert code == EXIT_OK
    assert "entries: 6, computed: 6, skipped: 0" in out

    code, out = run(capsys, "preprocess", manifest, "--out", cache, "--jobs", "1")
    assert code == EXIT_OK
    assert "entries: 6, computed: 0, skipped: 6" in out
    assert len(lines_with((tmp_path / "cache" / "index.tsv").read_text(), "train_")) == 6

    code, out = run(capsys, "preprocess", manifest, "--out", cache, "--jobs", "1", "--force")
    assert "computed: 6" in out


def test_missing_manifest(tmp_path, capsys):
    code, _ = run(capsys, "preprocess", str(tmp_path / "absent.tsv"), "--out", str(tmp_path))
    assert code == EXIT_USER


def test_missing_skeleton_file(dataset, tmp_path, capsys):
    os.remove(dataset / "train_0000.skeleton")
    code, _ = run(capsys, "adjacency", str(dataset / "train.tsv"), "--out", str(tmp_path / "adj"), "--jobs", "1")
    assert code == EXIT_USER


def test_malformed_skeleton_file(dataset, tmp_path, capsys):
    (dataset / "train_0001.skeleton").write_text("3\n0\n", encoding = "ascii")
    code, _ = run(capsys, "preprocess", str(dataset / "train.tsv"), "--out", str(tmp_path / "cache"), "--jobs", "1")
    assert code == EXIT_USER


def test_adjacency_entries(dataset, tmp_path, capsys):
    manifest = str(dataset / "train.tsv")
    code, out = run(capsys, "adjacency", manifest, "--out", str(tmp_path / "shared"), "--jobs", "1")
    assert code == EXIT_OK
    assert "entries: 6" in out
    assert float(lines_with(out, "off-diagonal min:")[0].split(":")[1]) < 0
    assert (tmp_path / "shared" / "adjacency.bin").exists()

    code, out = run(capsys, "adjacency", manifest, "--out", str(tmp_path / "branch"), "--jobs", "1", "--per-branch")
    assert code == EXIT_OK
    assert "entries: 18" in out


def test_adjacency_aggregate_is_positive(dataset, tmp_path, capsys):
    code, out = run(
        capsys, "adjacency", str(dataset / "eval.tsv"), "--out", str(tmp_path), "--jobs", "1", "--exact", "--sign", "aggregate"
    )
    assert code == EXIT_OK
    assert float(lines_with(out, "off-diagonal min:")[0].split(":")[1]) > 0


def complexity_value(out, prefix):
    return int(lines_with(out, prefix)[0].split(":")[1])


def test_complexity_structural_delta(capsys):
    code, structural = run(capsys, "complexity")
    assert code == EXIT_OK
    code, spatial = run(capsys, "complexity", "--no-structural")
    assert code == EXIT_OK
    assert "model: SpSt-GCN" in structural
    assert "model: Sp-GCN" in spatial
    delta = complexity_value(structural, "params:") - complexity_value(spatial, "params:")
    assert delta == complexity_value(structural, "structural weights:")
    assert complexity_value(structural, "flops:") > complexity_value(spatial, "flops:")


def test_gradcheck_passes(capsys):
    code, out = run(capsys, "gradcheck", "--seeds", "1")
    assert code == EXIT_OK
    assert out.strip()


def test_train_then_eval(dataset, tmp_path, tiny_config, capsys):
    out_dir = tmp_path / "run"
    code, out = run(
        capsys,
        "train", "--train", str(dataset / "train.tsv"), "--eval", str(dataset / "eval.tsv"), "--out", str(out_dir),
        "--config", tiny_config, "--epochs", "1", "--jobs", "1",
    )
    assert code == EXIT_OK
    assert "trained 3 branch models" in out
    assert len(lines_with(out, "fused")) == 1
    for branch in ("joint", "velocity", "bone"):
        assert (out_dir / f"{branch}.ckpt").exists()
    assert (out_dir / "metrics.jsonl").exists()

    code, out = run(
        capsys,
        "eval", "--checkpoints", str(out_dir), "--manifest", str(dataset / "eval.tsv"),
        "--config", tiny_config, "--jobs", "1", "--similarity",
    )
    assert code == EXIT_OK
    fused = float(lines_with(out, "fused")[0].split()[1])
    assert 0.0 <= fused <= 1.0
    assert "fusion grid:" in out
    assert len(lines_with(out, "edge-node similarity")) == 3


def test_train_single_branch(dataset, tmp_path, tiny_config, capsys):
    code, out = run(
        capsys,
        "train", "--train", str(dataset / "train.tsv"), "--out", str(tmp_path / "run"),
        "--config", tiny_config, "--epochs", "1", "--jobs", "1", "--branches", "bone", "--no-structural",
    )
    assert code == EXIT_OK
    assert "trained 1 branch models" in out
    assert not (tmp_path / "run" / "joint.ckpt").exists()


def test_eval_without_checkpoints(dataset, tmp_path, capsys):
    code, _ = run(capsys, "eval", "--checkpoints", str(tmp_path), "--manifest", str(dataset / "eval.tsv"))
    assert code == EXIT_USER


def test_unknown_config_key(dataset, tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("train.epoch = 3\n", encoding = "utf-8")
    code, _ = run(capsys, "preprocess", str(dataset / "train.tsv"), "--out", str(tmp_path), "--config", str(path))
    assert code == EXIT_USER


def generate_bad_argument_tests():
    return [
        ["complexity", "--jobs", "-1"],
        ["complexity", "--frobnicate"],
        ["preprocess"],
        ["adjacency", "m.tsv", "--out", "x", "--measure", "hamming"],
        [],
    ]


@pytest.mark.parametrize("argv", generate_bad_argument_tests())
def test_bad_arguments(argv):
    with pytest.raises(SystemExit) as exit_info:
        main(argv)
    assert exit_info.value.code == 2


def test_eval_compares_variants(dataset, tmp_path, tiny_config, capsys):
    runs = {}
    for name, flags in (("spst", []), ("sp", ["--no-structural"])):
        runs[name] = tmp_path / name
        code, _ = run(
            capsys,
            "train", "--train", str(dataset / "train.tsv"), "--out", str(runs[name]),
            "--config", tiny_config, "--epochs", "1", "--jobs", "1", "--branches", "joint", *flags,
        )
        assert code == EXIT_OK

    code, out = run(
        capsys,
        "eval", "--checkpoints", str(runs["spst"]), "--compare", str(runs["sp"]),
        "--manifest", str(dataset / "eval.tsv"), "--config", tiny_config, "--jobs", "1",
    )
    assert code == EXIT_OK
    similarity = lines_with(out, "edge-node similarity")
    assert len(similarity) == 1
    assert "SpSt-GCN" in similarity[0] and "Sp-GCN" in similarity[0]


def test_eval_compare_without_checkpoints(dataset, tmp_path, tiny_config, capsys):
    out_dir = tmp_path / "run"
    code, _ = run(
        capsys,
        "train", "--train", str(dataset / "train.tsv"), "--out", str(out_dir),
        "--config", tiny_config, "--epochs", "1", "--jobs", "1", "--branches", "joint",
    )
    assert code == EXIT_OK
    code, _ = run(
        capsys,
        "eval", "--checkpoints", str(out_dir), "--compare", str(tmp_path / "absent"),
        "--manifest", str(dataset / "eval.tsv"), "--jobs", "1",
    )
    assert code == EXIT_USER
