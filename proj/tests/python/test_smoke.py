import json
import math

import numpy as np
import pytest

import vtla


def test_shapes_and_sizes():
    assert vtla.shapes() == ["square", "triangle", "hexagon", "pentagon", "round"]
    assert vtla.default_peg_size("square") == 10.0
    assert vtla.is_in_distribution("hexagon")
    assert not vtla.is_in_distribution("round")
    with pytest.raises(ValueError):
        vtla.default_peg_size("star")


def test_geometry():
    assert vtla.fits_inside("square", 0.6, (0.3, 0.0, 0.0))
    assert not vtla.fits_inside("square", 0.6, (0.31, 0.0, 0.0))
    assert vtla.containment_margin("square", 0.6, (0.0, 0.0, 0.0)) == pytest.approx(0.3)
    assert vtla.max_admissible_offset("square", 0.6, 0.0) == pytest.approx(0.3, abs=1e-6)


def test_tokenizer_round_trip():
    ids = vtla.tokenize_action((-1.2, 0.4, 3.0))
    assert list(ids) == [13, 29, 16]
    x, y, rz = vtla.detokenize_action(ids)
    assert (x, y, rz) == pytest.approx((-1.2, 0.4, 3.0))
    assert vtla.format_action_text((-1.2, 0.4, 3.0)) == "x:-1.2 y:0.4 rz:3.0"


def test_render_observation_shapes():
    obs = vtla.render_observation("triangle", 1.0, (1.2, -0.4, 3.0), seed=31, capture_index=1)
    assert obs["contact"]
    assert obs["vision"].shape == (224, 224, 3)
    assert obs["tactile_left"].shape == (224, 224, 3)
    assert obs["vision"].dtype == np.float32
    assert 0.0 <= float(obs["vision"].min()) and float(obs["vision"].max()) <= 1.0
    again = vtla.render_observation("triangle", 1.0, (1.2, -0.4, 3.0), seed=31, capture_index=1)
    assert np.array_equal(obs["vision"], again["vision"])


def test_metrics_and_loss():
    labels = [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)]
    preds = [(0.0, 0.0, 0.0), (1.2, 1.0, 1.0)]
    assert vtla.goal_convergence_rate(preds, labels) == 50.0
    assert vtla.l1_per_axis(preds, labels)[0] == pytest.approx(0.1)
    assert vtla.dpo_loss_from_margin(0.0, 0.1) == pytest.approx(math.log(2))


def test_oracle_and_callable_benchmark():
    table = vtla.insertion_benchmark("oracle", grid="shapes", trials=2, seed=3)
    assert all(c["successes"] == c["trials"] == 2 for c in table["cells"])

    calls = []

    def zero(obs, shape):
        calls.append(shape)
        assert obs["vision"].shape == (224, 224, 3)
        return (0.0, 0.0, 0.0)

    mine = vtla.insertion_benchmark(zero, grid="square@2.0", trials=3, seed=5, method="zero")
    ref = vtla.insertion_benchmark("zero", grid="square@2.0", trials=3, seed=5, method="zero")
    assert mine == ref
    assert calls and set(calls) == {"square"}


def test_failing_callable_counts_as_errors():
    def broken(obs, shape):
        raise RuntimeError("no")

    table = vtla.insertion_benchmark(broken, grid="square@2.0", trials=2, seed=1)
    assert table["cells"][0]["errors"] == 2


def test_dataset_and_model(tmp_path):
    out = tmp_path / "data"
    summary = vtla.generate_dataset(out, {"square": 4, "round": 3}, seed=11)
    assert summary["samples"] == 7
    samples = vtla.read_manifest(out / "manifest.jsonl")
    assert len(samples) == 7
    assert {s["split"] for s in samples} == {"ID", "OOD"}

    model = vtla.PolicyModel.initialized(seed=2)
    ckpt = tmp_path / "m.ckpt"
    model.save(ckpt)
    back = vtla.PolicyModel.load(ckpt)
    assert back.params_hash == model.params_hash
    assert json.loads(back.architecture)["hidden1"] > 0

    obs = vtla.render_observation("square", 2.0, (1.0, 0.0, 0.0), seed=4)
    a = back.act(obs["tactile_left"], obs["tactile_right"], obs["vision"], "square")
    assert len(a) == 3
    table = vtla.insertion_benchmark(back, grid="square@2.0", trials=2, seed=1)
    assert table["cells"][0]["trials"] == 2


def test_cli_entry_point():
    code, out, err = vtla.run_cli(["--help"])
    assert code == 0
    assert "gen-data" in out
    code, _, err = vtla.run_cli(["frobnicate"])
    assert code == 2
