import json

import numpy as np
import pytest

import adaptids


def test_synthetic_dataset_shape_and_round_trip(tmp_path):
    ds = adaptids.generate_synthetic(classes=3, flows_per_class=10, seed=4)
    assert len(ds) == 30
    assert ds.catalog == {0: "benign", 1: "attack-1", 2: "attack-2"}
    assert np.bincount(ds.labels).tolist() == [10, 10, 10]
    mats = ds.matrices()
    assert mats.shape == (30, adaptids.MATRIX_ROWS, adaptids.MATRIX_COLS)
    assert mats.dtype == np.float32
    assert mats.min() >= 0.0 and mats.max() <= 1.0
    for i, n in enumerate(ds.n_real_packets):
        assert not mats[i, n:].any()

    path = tmp_path / "d.flwm"
    ds.write(path)
    back = adaptids.Dataset.read(path)
    assert back.same_content(ds)
    assert np.array_equal(back.matrix(3), mats[3])


def test_dataset_building_and_errors(tmp_path):
    ds = adaptids.Dataset()
    m = np.zeros((100, 200), dtype=np.float32)
    m[0, :5] = 1.0
    ds.append(m, 0, 1)
    ds.append(m, 4, 1, "worm")
    assert ds.catalog == {0: "benign", 4: "worm"}
    assert len(ds.filter([4])) == 1
    with pytest.raises(adaptids.InvalidInput):
        ds.append(np.zeros((3, 3)), 0, 1)
    with pytest.raises(IndexError):
        ds.matrix(9)
    bad = tmp_path / "bad.flwm"
    bad.write_bytes(b"NOPE" + b"\0" * 40)
    with pytest.raises(adaptids.ContainerError):
        adaptids.Dataset.read(bad)
    with pytest.raises(adaptids.InvalidInput):
        adaptids.generate_synthetic(classes=1)


def test_ingest_hand_built_capture(tmp_path):
    frame = bytes.fromhex(
        "001122334455" "66778899aabb" "0800"
        "4500002e12344000" "4011beef" "c0a8010a" "0a000001"
        "303900350016abcd" + "01020304050607080910111213141516"  # noqa: ISC003
    )
    frame = frame[:60] + b"\0" * max(0, 60 - len(frame))
    header = bytes.fromhex("d4c3b2a1" "02000400" "00000000" "00000000" "ffff0000" "01000000")
    rec = (5).to_bytes(4, "little") + (0).to_bytes(4, "little") + len(frame).to_bytes(4, "little") * 2
    pcap = tmp_path / "one.pcap"
    pcap.write_bytes(header + rec + frame)
    ds, summary = adaptids.ingest_pcaps([str(pcap)])
    assert summary["packets"] == 1 and summary["flows"] == 1 and summary["skipped_packets"] == 0
    row = ds.matrix(0)[0]
    assert row[0] == pytest.approx(0x45 / 255)
    assert not row[12:20].any()  # addresses anonymized
    (tmp_path / "trunc.pcap").write_bytes(header + rec + frame[:10])
    with pytest.raises(adaptids.TruncatedCapture):
        adaptids.ingest_pcaps([str(tmp_path / "trunc.pcap")])


TINY = {
    "scenario": "federated",
    "seed": 3,
    "model": "cnn",
    "architecture": {"base": "cnn", "input_rows": 6, "input_cols": 64, "conv_channels": [2, 2], "dense_widths": [6, 4, 2]},
    "data": {"synthetic": {"classes": 4, "flows_per_class": 60, "min_packets": 5, "max_packets": 14}},
    "initial": {"epochs": 3, "batch_size": 16, "learning_rate": 0.1},
    "continual": {"k": 2, "epochs": 2, "learning_rate": 0.05},
    "federated": {"epochs": 1},
    "compress": {"epochs": 2, "batch_size": 16, "learning_rate": 0.05},
    "train_per_class": 30,
    "update_flows": 20,
    "eval_per_class": 15,
    "known_classes": [1],
}


def test_config_validation():
    full = adaptids.validate_config(TINY)
    assert full["continual"]["tau"] == 0.9
    with pytest.raises(adaptids.ConfigError):
        adaptids.validate_config({**TINY, "sed": 1})
    with pytest.raises(adaptids.ConfigError):
        adaptids.validate_config({**TINY, "decision_threshold": 0.3})


def test_federated_scenario_is_reproducible(tmp_path):
    runs = []
    for name in ("a", "b"):
        metrics = adaptids.run_scenario({**TINY, "output_dir": str(tmp_path / name)})
        assert metrics["schema_version"] == adaptids.METRICS_SCHEMA_VERSION
        runs.append(metrics)
    assert runs[0]["results"] == runs[1]["results"]
    a = (tmp_path / "a" / "main-1.ckpt").read_bytes()
    assert a == (tmp_path / "b" / "main-1.ckpt").read_bytes()

    model = adaptids.Model.load(tmp_path / "a" / "main-1.ckpt")
    assert model.has_fisher
    assert json.loads(model.architecture)["input_rows"] == 6
    ds = adaptids.generate_synthetic(classes=4, flows_per_class=5, seed=9, min_packets=5, max_packets=14)
    p = model.predict_proba(ds.matrix(0))
    assert sum(p) == pytest.approx(1.0)
    assert model.evaluate(ds)["total"] == 20
    with pytest.raises(adaptids.UnsupportedModel):
        model.packet_probabilities(ds.matrix(0), int(ds.n_real_packets[0]))


def test_early_detection_scenario(tmp_path):
    cfg = {
        "scenario": "early-detection",
        "seed": 2,
        "model": "lstm",
        "architecture": {"base": "lstm", "input_rows": 12, "input_cols": 64, "lstm_cells": 6, "dense_widths": [6, 2]},
        "data": {"synthetic": {"classes": 3, "flows_per_class": 40, "min_packets": 5, "max_packets": 12}},
        "initial": {"epochs": 3, "batch_size": 16, "learning_rate": 0.3},
        "train_per_class": 20,
        "eval_per_class": 10,
        "output_dir": str(tmp_path),
    }
    metrics = adaptids.run_scenario(cfg)
    curve = metrics["results"]["curve"]
    assert curve["n_flows"][0] == 20
    assert (tmp_path / "curve.csv").read_text().startswith("packet_index,")
    model = adaptids.Model.load(tmp_path / "lstm.ckpt")
    ds = adaptids.generate_synthetic(classes=3, flows_per_class=4, seed=8, min_packets=5, max_packets=12)
    n = int(ds.n_real_packets[0])
    probs = model.packet_probabilities(ds.matrix(0), n)
    assert probs.shape == (min(n, 12),)
    verdict = model.decide(ds.matrix(0), n, theta=0.5000001)
    assert verdict is None or verdict[0] in ("attack", "benign")
    assert len(model.early_detection_curve(ds)["mean_accuracy"]) <= 12
