import json
import struct

import numpy as np
import pytest

from bevkit import io as bio
from bevkit.geom import Box3D, FeatureMap, PointCloud, Pose, yaw_rotation


class TestMmpc:
    def test_round_trip(self, tmp_path):
        pts = np.array([[1.5, -2.25, 3.0, 0.5], [0.0, 0.0, 10.0, 1.0]])
        path = tmp_path / "cloud.mmpc"
        bio.write_mmpc(path, PointCloud(pts))
        out = bio.read_mmpc(path)
        # all values above are float32-representable, so exact
        np.testing.assert_array_equal(out.points, pts)

    def test_wire_layout(self, tmp_path):
        path = tmp_path / "one.mmpc"
        bio.write_mmpc(path, PointCloud([[1.0, 2.0, 3.0, 0.25]]))
        raw = path.read_bytes()
        assert raw[:4] == b"MMPC"
        assert struct.unpack("<I", raw[4:8]) == (1,)
        assert np.frombuffer(raw[8:], dtype="<f4").tolist() == [1.0, 2.0, 3.0, 0.25]

    def test_empty_cloud(self, tmp_path):
        path = tmp_path / "empty.mmpc"
        bio.write_mmpc(path, PointCloud.empty())
        assert len(bio.read_mmpc(path)) == 0

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.mmpc"
        path.write_bytes(b"JUNK" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            bio.read_mmpc(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.mmpc"
        path.write_bytes(b"MMPC" + struct.pack("<I", 2) + b"\x00" * 16)
        with pytest.raises(ValueError, match="bytes"):
            bio.read_mmpc(path)


class TestTnsr:
    def test_round_trip_exact(self, tmp_path):
        data = np.random.default_rng(0).normal(size=(2, 3, 4, 5))
        path = tmp_path / "t.tnsr"
        bio.write_tnsr(path, data)
        out = bio.read_tnsr(path)
        np.testing.assert_array_equal(out.data, data)

    def test_header_is_single_json_line(self, tmp_path):
        path = tmp_path / "t.tnsr"
        bio.write_tnsr(path, np.zeros((1, 2, 3, 4)))
        header, _, payload = path.read_bytes().partition(b"\n")
        assert header == b'{"shape":[1,2,3,4]}'
        assert len(payload) == 8 * 24

    def test_feature_map_accepted(self, tmp_path):
        fm = FeatureMap(np.ones((1, 1, 2, 2)))
        path = tmp_path / "fm.tnsr"
        bio.write_tnsr(path, fm)
        np.testing.assert_array_equal(bio.read_tnsr(path).data, fm.data)

    def test_rank_enforced(self, tmp_path):
        with pytest.raises(ValueError):
            bio.write_tnsr(tmp_path / "x.tnsr", np.zeros((2, 2)))

    def test_payload_length_checked(self, tmp_path):
        path = tmp_path / "bad.tnsr"
        path.write_bytes(b'{"shape":[1,1,1,2]}\n' + b"\x00" * 8)
        with pytest.raises(ValueError, match="payload"):
            bio.read_tnsr(path)


class TestBoxesJsonl:
    def test_round_trip_with_and_without_score(self, tmp_path):
        gt = Box3D([1.0, 2.0, 3.0], [1.0, 1.0, 2.0], yaw_rotation(0.5), category=3)
        pred = Box3D([0.0, 0.0, 9.0], [2.0, 1.0, 4.0], np.eye(3), category=1, score=0.75)
        path = tmp_path / "boxes.jsonl"
        bio.write_boxes_jsonl(path, [gt, (7, pred)])
        out = bio.read_boxes_jsonl(path)
        assert [img for img, _ in out] == [0, 7]
        got_gt, got_pred = out[0][1], out[1][1]
        assert got_gt.score is None and got_pred.score == 0.75
        np.testing.assert_allclose(got_gt.rotation, gt.rotation)
        np.testing.assert_array_equal(got_pred.center, pred.center)
        assert (got_gt.category, got_pred.category) == (3, 1)

    def test_schema_keys(self, tmp_path):
        path = tmp_path / "one.jsonl"
        bio.write_boxes_jsonl(path, [Box3D([0, 0, 1], [1, 1, 1], np.eye(3))])
        rec = json.loads(path.read_text().strip())
        assert set(rec) == {"center", "dims", "R", "category"}
        assert len(rec["R"]) == 9

    def test_bad_record_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"center":[0,0,1],"dims":[1,1,1]}\n')
        with pytest.raises(ValueError, match="bad.jsonl:1"):
            bio.read_boxes_jsonl(path)


class TestCameraFiles:
    def test_intrinsics_round_trip(self, tmp_path, default_k):
        path = tmp_path / "k.json"
        bio.write_intrinsics(path, default_k)
        assert bio.read_intrinsics(path) == default_k

    def test_pose_round_trip(self, tmp_path):
        pose = Pose(yaw_rotation(0.3), [1.0, -2.0, 3.0])
        path = tmp_path / "pose.json"
        bio.write_pose(path, pose)
        out = bio.read_pose(path)
        np.testing.assert_array_equal(out.rotation, pose.rotation)
        np.testing.assert_array_equal(out.translation, pose.translation)
