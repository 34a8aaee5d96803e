import json

import pytest
import yaml

from slicesort.cli import parse_override, run


def only(root, command):
    dirs = sorted(root.glob(f"*-{command}*"))
    assert dirs, f"no {command} run under {root}"
    return dirs[-1]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run(["phantom-gen", "--runs-root", str(out / "runs"), "--set", f"output={out / 'ph'}", "--set", "n=4",
                "--set", "spec.shape=[16, 32, 32]"]) == 0
    return out / "ph"


def small_pretrain(root, data, *extra):
    return run(["pretrain", "--runs-root", str(root), "--set", f"data={data}", "--set", "steps=3",
                "--set", "sampling.k=6", "--set", "encoder.embedding_dim=16", *extra])


def test_parse_override():
    assert parse_override("sampling.k=8") == (["sampling", "k"], 8)
    assert parse_override("loss=sorting") == (["loss"], "sorting")


def test_phantom_gen_layout(data):
    assert len(list(data.glob("phantom_*_labels.json"))) == 4
    assert len(list(data.glob("phantom_*_foreground.raw"))) == 4
    header = json.loads((data / "phantom_000.json").read_text())
    assert header["dims"] == [16, 32, 32]


def test_pretrain_artifacts_and_bit_exact_rerun(data, tmp_path):
    assert small_pretrain(tmp_path / "a", data, "--set", "loss=sorting") == 0
    first = only(tmp_path / "a", "pretrain")
    for name in ("config.yaml", "metrics.jsonl", "timing.jsonl", "record.json", "md_curve.png"):
        assert (first / name).exists(), name
    assert list((first / "checkpoints").glob("*.npz"))
    frozen = yaml.safe_load((first / "config.yaml").read_text())
    assert frozen["command"] == "pretrain" and frozen["steps"] == 3

    assert run(["pretrain", "--runs-root", str(tmp_path / "b"), "--config", str(first / "config.yaml")]) == 0
    second = only(tmp_path / "b", "pretrain")
    assert (first / "metrics.jsonl").read_bytes() == (second / "metrics.jsonl").read_bytes()


def test_evaluate_and_localize(data, tmp_path):
    assert small_pretrain(tmp_path, data, "--set", "encoder.dropout_between_blocks=0.2") == 0
    ckpt = next((only(tmp_path, "pretrain") / "checkpoints").glob("*.npz"))
    assert run(["evaluate", "--runs-root", str(tmp_path), "--set", f"data={data}", "--set", f"checkpoint={ckpt}",
                "--set", "batches=5", "--set", "k=6"]) == 0
    result = json.loads((only(tmp_path, "evaluate") / "evaluation.json").read_text())
    assert result["metric"] == "mean_displacement" and result["batches"] == 5

    assert run(["localize", "--runs-root", str(tmp_path), "--set", f"data={data}", "--set", f"checkpoint={ckpt}",
                "--set", "mc_samples=3"]) == 0
    loc = only(tmp_path, "localize")
    boxes = json.loads((loc / "crop_boxes.json").read_text())
    assert [b["volume_id"] for b in boxes] == [f"phantom_{i:03d}" for i in range(4)]
    assert all(0.0 <= b["retained_foreground"] <= 1.0 for b in boxes)
    assert list(loc.glob("*_projection.png"))


def test_finetune_compare_report(data, tmp_path):
    for frac in ("0.5", "1.0"):
        assert run(["finetune", "--runs-root", str(tmp_path), "--set", f"data={data}", "--set", "epochs=1",
                    "--set", "splits=2", "--set", "batch_size=8", "--set", "encoder.embedding_dim=16",
                    "--set", f"annotated_fraction={frac}"]) == 0
    runs = [str(p) for p in sorted(tmp_path.glob("*-finetune*"))]
    assert run(["compare", "--runs-root", str(tmp_path), *runs]) == 0
    table = (only(tmp_path, "compare") / "comparison.md").read_text()
    assert "IoU@0.5" in table and "IoU@1" in table

    out = tmp_path / "report"
    assert run(["report", "--runs-root", str(tmp_path), "--set", f"out={out}", *runs]) == 0
    before = {p.name: p.read_bytes() for p in out.iterdir() if p.suffix != ".png"}
    assert run(["report", "--runs-root", str(tmp_path), "--set", f"out={out}", *runs]) == 0
    after = {p.name: p.read_bytes() for p in out.iterdir() if p.suffix != ".png"}
    assert before == after and (out / "iou_vs_fraction.png").exists()


def test_exit_codes(data, tmp_path):
    root = ["--runs-root", str(tmp_path)]
    assert run(["pretrain", *root, "--set", f"data={data}", "--set", "loss=byol"]) == 2
    assert run(["pretrain", *root, "--set", f"data={data}", "--set", "stepz=3"]) == 2
    assert run(["pretrain", *root, "--set", f"data={tmp_path / 'nowhere'}"]) == 3
    assert run(["evaluate", *root, "--set", f"data={data}", "--set", f"checkpoint={tmp_path / 'x.npz'}"]) == 3
    assert run(["pretrain", *root, "--set", f"data={data}", "--set", "sampling.k=40", "--set", "steps=1"]) == 3
    assert run(["compare", *root]) == 2
    # failed runs leave no empty directories behind
    assert all(any(p.iterdir()) for p in tmp_path.iterdir() if p.is_dir())


def test_missing_path_is_named(data, tmp_path, caplog):
    missing = tmp_path / "missing_dir"
    assert run(["pretrain", "--runs-root", str(tmp_path), "--set", f"data={missing}"]) == 3
    assert "missing_dir" in caplog.text
