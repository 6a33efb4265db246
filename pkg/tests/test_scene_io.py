"""Scene data model and binary round-trip tests."""

import struct

import numpy as np
import pytest

from clickseg.errors import FileFormatError, ValidationError
from clickseg.scene import Scene, load_scene, save_scene
from clickseg.synth import SynthSpec, generate_scene

from conftest import make_scene


class TestSceneInvariants:
    def test_minimal_scene(self):
        s = make_scene([[0.0, 0.0, 0.0]], semantic=[-1], instance=[-1])
        assert s.num_points == 1

    def test_empty_scene_rejected(self):
        with pytest.raises(ValidationError):
            make_scene(np.zeros((0, 3)))

    def test_semantic_out_of_range(self):
        with pytest.raises(ValidationError):
            make_scene([[0, 0, 0]], semantic=[7], num_categories=4)
        with pytest.raises(ValidationError):
            make_scene([[0, 0, 0]], semantic=[-2])

    def test_instance_requires_semantic(self):
        with pytest.raises(ValidationError):
            make_scene([[0, 0, 0]], semantic=[-1], instance=[3])

    def test_non_finite_coordinates(self):
        with pytest.raises(ValidationError):
            make_scene([[np.inf, 0, 0]])

    def test_colors_range(self):
        with pytest.raises(ValidationError):
            make_scene([[0, 0, 0]], colors=[[1.5, 0, 0]])

    def test_arrays_frozen(self):
        s = make_scene([[0.0, 0.0, 0.0]])
        with pytest.raises(ValueError):
            s.points[0, 0] = 1.0


class TestSceneFile:
    def test_minimal_file_layout(self, tmp_path):
        s = make_scene([[0.0, 0.0, 0.0]], colors=[[0, 0, 0]], semantic=[-1], instance=[-1])
        path = tmp_path / "one.otoc"
        save_scene(s, path)
        data = path.read_bytes()
        assert data[:4] == b"OTOC"
        assert len(data) == 16 + 1 * 23

    def test_round_trip_bytes(self, tmp_path, rng):
        n = 64
        s = make_scene(
            rng.uniform(-5, 5, (n, 3)),
            colors=rng.uniform(0, 1, (n, 3)),
            semantic=rng.integers(-1, 4, n).astype(np.int32),
            instance=np.full(n, -1, np.int32),
        )
        p1 = tmp_path / "a.otoc"
        p2 = tmp_path / "b.otoc"
        save_scene(s, p1)
        save_scene(load_scene(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_synth_four_point_scene_parses_independently(self, tmp_path):
        # floor and wall, two points each; parsed with struct, not the library
        spec = SynthSpec(
            seed=5,
            objects_per_category=((1, 1), (1, 1), (0, 0), (0, 0), (0, 0), (0, 0)),
            points_per_object=((2, 2), (2, 2), (1, 1), (1, 1), (1, 1), (1, 1)),
        )
        scene = generate_scene(spec)
        path = tmp_path / "four.otoc"
        save_scene(scene, path)
        raw = path.read_bytes()
        magic, version, n, c = struct.unpack_from("<4sIII", raw)
        assert (magic, version, n, c) == (b"OTOC", 1, 4, 6)
        instances = []
        for i in range(n):
            rec = raw[16 + 23 * i : 16 + 23 * (i + 1)]
            _x, _y, _z = struct.unpack_from("<3f", rec, 0)
            sem, inst = struct.unpack_from("<ii", rec, 15)
            instances.append(inst)
        assert instances == [0, 0, 1, 1]
        loaded = load_scene(path)
        assert loaded.gt_instance.tolist() == [0, 0, 1, 1]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.otoc"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FileFormatError):
            load_scene(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.otoc"
        path.write_bytes(struct.pack("<4sIII", b"OTOC", 9, 0, 1))
        with pytest.raises(FileFormatError):
            load_scene(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.otoc"
        path.write_bytes(struct.pack("<4sIII", b"OTOC", 1, 2, 1) + b"\x00" * 23)
        with pytest.raises(FileFormatError):
            load_scene(path)

    def test_label_out_of_range_is_validation_error(self, tmp_path):
        rec = struct.pack("<3f", 0, 0, 0) + bytes([0, 0, 0]) + struct.pack("<ii", 9, -1)
        path = tmp_path / "label.otoc"
        path.write_bytes(struct.pack("<4sIII", b"OTOC", 1, 1, 2) + rec)
        with pytest.raises(ValidationError):
            load_scene(path)
