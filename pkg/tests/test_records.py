"""Serialization round trips and format validation.

Dataset files and checkpoints must round-trip bit for bit (17-digit
decimals and hex floats both reproduce float64 exactly).  Record files
carry angles as 12-digit degrees, so those round-trip within 1e-9 radians
rather than exactly.  Parse errors must name the file and line.
"""

import json
import math

import numpy as np
import pytest

from viewbench.angles import circular_difference
from viewbench.errors import FormatError
from viewbench.metrics import Box, Detection, GroundTruth
from viewbench.net import NetConfig, TrainConfig, init_params
from viewbench.records import (
    atomic_write_text,
    commit_files,
    feature_matrix,
    format_dataset,
    format_detections,
    format_eval_report,
    format_ground_truths,
    format_train_log,
    load_checkpoint,
    net_config_from_dict,
    net_config_to_dict,
    parse_dataset,
    parse_detections,
    parse_ground_truths,
    read_benchmark,
    save_checkpoint,
    train_config_from_dict,
    train_config_to_dict,
    write_benchmark,
)
from viewbench.synthetic import ClassSpec, generate, oracle_eval


def _specs():
    return (
        ClassSpec(class_id=1, seed=0, feature_dim=6),
        ClassSpec(class_id=2, seed=0, feature_dim=6, symmetry_order=2),
    )


def _assert_datasets_equal(a, b):
    assert len(a.scenes) == len(b.scenes)
    for sa, sb in zip(a.scenes, b.scenes):
        assert sa.image_id == sb.image_id
        assert sa.gts == sb.gts
        assert len(sa.proposals) == len(sb.proposals)
        for pa, pb in zip(sa.proposals, sb.proposals):
            assert pa.box == pb.box
            assert pa.matched_gt == pb.matched_gt
            assert pa.iou == pb.iou
            assert pa.noise_seed == pb.noise_seed
            np.testing.assert_array_equal(pa.feature, pb.feature)


class TestRecordFiles:
    GTS = [
        GroundTruth("img0", 1, Box(0.1, 0.2, 0.55, 0.9), 1.234567),
        GroundTruth("img1", 2, Box(0.0, 0.0, 0.3, 0.4), 6.28),
    ]
    DETS = [
        Detection("img0", 1, Box(0.12, 0.18, 0.5, 0.88), 0.93, 1.25),
        Detection("img1", 2, Box(0.01, 0.02, 0.31, 0.41), -0.4, 0.0),
    ]

    def test_ground_truth_round_trip(self):
        back = parse_ground_truths(format_ground_truths(self.GTS))
        assert len(back) == 2
        for orig, got in zip(self.GTS, back):
            assert got.image_id == orig.image_id
            assert got.class_id == orig.class_id
            assert got.box == orig.box  # 17 significant digits, exact
            assert circular_difference(got.azimuth, orig.azimuth) < 1e-9

    def test_detection_round_trip(self):
        back = parse_detections(format_detections(self.DETS))
        for orig, got in zip(self.DETS, back):
            assert got.box == orig.box
            assert got.score == orig.score
            assert circular_difference(got.azimuth, orig.azimuth) < 1e-9

    def test_angles_stored_in_degrees(self):
        line = format_ground_truths([self.GTS[0]]).splitlines()[1]
        deg = float(line.split()[-1])
        assert deg == pytest.approx(math.degrees(1.234567), abs=1e-9)

    def test_comments_and_blanks_skipped(self):
        text = format_detections(self.DETS) + "\n# trailing comment\n\n"
        assert len(parse_detections(text)) == 2

    def test_malformed_line_reports_position(self):
        text = format_detections(self.DETS) + "img2 1 0 0 1 1 notanumber 10\n"
        with pytest.raises(FormatError, match=r"dets\.txt:4"):
            parse_detections(text, path="dets.txt")

    def test_wrong_field_count(self):
        with pytest.raises(FormatError, match="expected 7 fields"):
            parse_ground_truths("img0 1 0 0 1 1\n")

    def test_nonfinite_rejected(self):
        with pytest.raises(FormatError, match="non-finite"):
            parse_detections("img0 1 0 0 1 1 inf 10\n")


class TestDatasetFiles:
    def test_inline_round_trip(self):
        ds = generate(5, 6, _specs())
        back = parse_dataset(format_dataset(ds), _specs(), ds.split, ds.seed)
        _assert_datasets_equal(ds, back)

    def test_sidecar_round_trip(self):
        ds = generate(5, 6, _specs())
        text = format_dataset(ds, inline_features=False)
        back = parse_dataset(text, _specs(), ds.split, ds.seed, features=feature_matrix(ds))
        _assert_datasets_equal(ds, back)

    def test_sidecar_required_when_not_inline(self):
        ds = generate(5, 2, _specs())
        text = format_dataset(ds, inline_features=False)
        with pytest.raises(FormatError, match="no inline features"):
            parse_dataset(text, _specs(), ds.split, ds.seed)

    def test_unknown_line_type(self):
        with pytest.raises(FormatError, match=r":1.*'boxes'"):
            parse_dataset("boxes 3\n", _specs(), "train", 0)

    def test_prop_before_scene(self):
        with pytest.raises(FormatError, match="before any scene"):
            parse_dataset("prop 0 1.0 5 0 0 1 1\n", _specs(), "train", 0)


class TestBenchmarkFiles:
    def test_round_trip(self, tmp_path):
        train = generate(1, 5, _specs(), split="train")
        test = generate(2, 3, _specs(), split="test")
        manifest_path = write_benchmark(tmp_path, train, test, config_echo={"note": "x"})
        train2, test2, manifest = read_benchmark(manifest_path)
        _assert_datasets_equal(train, train2)
        _assert_datasets_equal(test, test2)
        assert manifest["config"] == {"note": "x"}
        assert train2.seed == train.seed

    def test_round_trip_binary_features(self, tmp_path):
        train = generate(1, 5, _specs(), split="train")
        test = generate(2, 3, _specs(), split="test")
        manifest_path = write_benchmark(tmp_path, train, test, features_binary=True)
        train2, test2, _ = read_benchmark(manifest_path)
        _assert_datasets_equal(train, train2)
        _assert_datasets_equal(test, test2)
        assert (tmp_path / "train_features.npy").exists()

    def test_gt_file_replays_clean(self, tmp_path):
        train = generate(1, 5, _specs(), split="train")
        test = generate(2, 3, _specs(), split="test")
        write_benchmark(tmp_path, train, test)
        gts = parse_ground_truths((tmp_path / "test_gt.txt").read_text())
        assert len(gts) == len(test.ground_truths())

    def test_manifest_count_mismatch(self, tmp_path):
        train = generate(1, 3, _specs(), split="train")
        test = generate(2, 2, _specs(), split="test")
        manifest_path = write_benchmark(tmp_path, train, test)
        doc = json.loads(manifest_path.read_text())
        doc["splits"]["train"]["n_proposals"] += 1
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="counts disagree"):
            read_benchmark(manifest_path)

    def test_not_a_manifest(self, tmp_path):
        p = tmp_path / "manifest.json"
        p.write_text('{"format": "something-else"}')
        with pytest.raises(FormatError, match="not a benchmark manifest"):
            read_benchmark(p)


class TestCheckpoints:
    CFG = NetConfig(input_dim=3, trunk_widths=(4,), head="cls", n_classes=2, n_bins=5, seed=9)

    def test_bit_exact_round_trip(self, tmp_path):
        params = init_params(self.CFG)
        # give momentum buffers nonzero content too
        for layer in params.layers.values():
            layer.vw = layer.w * 0.3
            layer.vb = layer.b + 0.1
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, self.CFG, iteration=123, extra={"tag": "t"})
        ck = load_checkpoint(path)
        assert ck.net == self.CFG
        assert ck.header["iteration"] == 123
        assert ck.header["tag"] == "t"
        assert list(ck.params.layers) == list(params.layers)
        for name in params.layers:
            for attr in ("w", "b", "vw", "vb"):
                np.testing.assert_array_equal(
                    getattr(ck.params.layers[name], attr),
                    getattr(params.layers[name], attr),
                )

    def test_missing_magic(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_text("not a checkpoint\n")
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(p)

    def test_corrupt_hex(self, tmp_path):
        params = init_params(self.CFG)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, self.CFG, iteration=0)
        text = path.read_text().replace("0x1.", "0xg.", 1)
        path.write_text(text)
        with pytest.raises(FormatError, match="hex"):
            load_checkpoint(path)

    def test_truncated_values(self, tmp_path):
        params = init_params(self.CFG)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, self.CFG, iteration=0)
        lines = path.read_text().splitlines()
        w_line = next(i for i, l in enumerate(lines) if l.startswith("w "))
        lines[w_line] = " ".join(lines[w_line].split()[:-1])
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match="expected .* values"):
            load_checkpoint(path)


class TestConfigDicts:
    def test_net_config(self):
        cfg = NetConfig(input_dim=4, trunk_widths=(8, 6), head="joint_reg",
                        n_classes=3, n_dims=2, split_depth=1, seed=5)
        assert net_config_from_dict(net_config_to_dict(cfg)) == cfg

    def test_train_config(self):
        tcfg = TrainConfig(lr=0.01, decay_at=(100, 200), seed=3)
        assert train_config_from_dict(train_config_to_dict(tcfg)) == tcfg

    def test_json_safe(self):
        cfg = NetConfig(input_dim=4, trunk_widths=(8,), head="cls", n_classes=1)
        json.dumps(net_config_to_dict(cfg))
        json.dumps(train_config_to_dict(TrainConfig()))


class TestReportsAndLogs:
    def test_eval_report_json(self):
        ds = generate(0, 5, _specs())
        report = oracle_eval(ds)
        doc = json.loads(format_eval_report(report, echo={"seed": 0}))
        assert doc["mean_ap"] == 1.0
        assert doc["mean_avp"]["24"] == 1.0
        assert doc["config"] == {"seed": 0}

    def test_train_log_format(self):
        from viewbench.net import LogEntry

        text = format_train_log([LogEntry(0, 0.001, 12.5, 0.5)])
        lines = text.splitlines()
        assert lines[0].startswith("#")
        assert lines[1].split() == ["0", "0.001", "12.5", "0.5"]


class TestAtomicWrites:
    def test_overwrite_in_place(self, tmp_path):
        p = tmp_path / "out.txt"
        atomic_write_text(p, "first\n")
        atomic_write_text(p, "second\n")
        assert p.read_text() == "second\n"
        assert list(tmp_path.glob("*.tmp")) == []

    def test_failed_commit_leaves_nothing(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("a file, not a directory\n")
        files = {
            tmp_path / "ok.txt": b"data",
            blocker / "sub.txt": b"cannot be staged",
        }
        with pytest.raises(OSError):
            commit_files(files)
        assert not (tmp_path / "ok.txt").exists()
        assert list(tmp_path.glob("*.tmp")) == []
