import io

import numpy as np
import pytest

from pointssm.geometry import PointCloud
from pointssm.data_io import (Mesh, ParseError, CheckpointError, parse_off,
                              sample_mesh_surface, generate_synthetic, save_xyz,
                              load_xyz, save_checkpoint, load_checkpoint,
                              SYNTHETIC_CLASSES, CHECKPOINT_MAGIC)

TETRA_OFF = """OFF
4 4 0
0 0 0
1 0 0
0 1 0
0 0 1
3 0 1 2
3 0 1 3
3 0 2 3
3 1 2 3
"""


class TestParseOff:
    def test_tetrahedron(self):
        mesh = parse_off(TETRA_OFF)
        assert mesh.vertices.shape == (4, 3)
        assert mesh.faces.shape == (4, 3)

    def test_fused_header_equivalent(self):
        split = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        fused = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        np.testing.assert_array_equal(split.vertices, fused.vertices)
        np.testing.assert_array_equal(split.faces, fused.faces)

    def test_missing_header_accepted(self):
        mesh = parse_off("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        assert mesh.faces.shape == (1, 3)

    def test_quad_face_fans_to_two_triangles(self):
        mesh = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_comments_tolerated(self):
        mesh = parse_off("# header comment\nOFF\n3 1 0\n0 0 0 # trailing\n1 0 0\n"
                         "0 1 0\n3 0 1 2\n")
        assert mesh.vertices.shape == (3, 3)

    def test_stream_input(self):
        assert parse_off(io.StringIO(TETRA_OFF)).faces.shape == (4, 3)

    @pytest.mark.parametrize("text,fragment", [
        ("", "empty"),
        ("OFF\n1 2\n", "counts"),
        ("OFF\n-1 0 0\n", "negative"),
        ("OFF\n1 0 0\n0 0\n", "3 coordinates"),
        ("OFF\n1 0 0\n0 0 x\n", "number"),
        ("OFF\n2 0 0\n0 0 0\n", "truncated"),
        ("OFF\n1 1 0\n0 0 0\n3 0 0\n", "lists 3 vertices"),
        ("OFF\n1 1 0\n0 0 0\n2 0 0\n", "at least 3"),
        ("OFF\n1 1 0\n0 0 0\n3 0 0 5\n", "out of range"),
        ("OFF\n1 0 0\n0 0 inf\n", "non-finite"),
    ])
    def test_malformed_inputs_raise_parse_error(self, text, fragment):
        with pytest.raises(ParseError, match=fragment):
            parse_off(text)

    def test_errors_carry_line_numbers(self):
        try:
            parse_off("OFF\n1 0 0\nbad line here\n")
        except ParseError as exc:
            assert exc.line == 3
        else:
            pytest.fail("expected ParseError")

    def test_fuzz_never_crashes(self):
        rng = np.random.default_rng(0)
        base = TETRA_OFF.encode()
        for _ in range(500):
            blob = bytearray(base)
            for _ in range(rng.integers(1, 8)):
                op = rng.integers(3)
                if op == 0 and blob:
                    blob[rng.integers(len(blob))] = rng.integers(256)
                elif op == 1 and blob:
                    del blob[rng.integers(len(blob))]
                else:
                    blob.insert(rng.integers(len(blob) + 1), rng.integers(256))
            try:
                parse_off(bytes(blob).decode("utf-8", errors="replace"))
            except ParseError:
                pass


class TestSampleMeshSurface:
    def test_single_triangle_containment(self):
        mesh = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        cloud = sample_mesh_surface(mesh, 200, seed=0)
        pts = cloud.points
        assert np.abs(pts[:, 2]).max() == 0.0
        assert (pts[:, 0] >= -1e-12).all() and (pts[:, 1] >= -1e-12).all()
        assert (pts[:, 0] + pts[:, 1] <= 1.0 + 1e-12).all()

    def test_area_weighted_frequencies(self):
        # two coplanar triangles with areas 0.5 and 1.5: frequency 0.25 / 0.75
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [-3, 0, 0], [0, -1, 0]],
                         dtype=float)
        mesh = Mesh(verts, np.array([[0, 1, 2], [0, 3, 4]]))
        cloud = sample_mesh_surface(mesh, 10_000, seed=1)
        frac_small = (cloud.points[:, 0] > 0).mean()
        assert abs(frac_small - 0.25) < 0.03

    def test_degenerate_triangle_never_selected(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5], [5, 5, 5]],
                         dtype=float)
        mesh = Mesh(verts, np.array([[0, 1, 2], [3, 4, 3]]))
        cloud = sample_mesh_surface(mesh, 500, seed=2)
        assert cloud.points.max() <= 1.0

    def test_all_degenerate_rejected(self):
        mesh = Mesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
        with pytest.raises(ValueError):
            sample_mesh_surface(mesh, 10, seed=0)

    def test_deterministic(self):
        mesh = parse_off(TETRA_OFF)
        a = sample_mesh_surface(mesh, 64, seed=9).points
        b = sample_mesh_surface(mesh, 64, seed=9).points
        np.testing.assert_array_equal(a, b)

    def test_triangle_order_invariant_in_distribution(self):
        # chi-square over a fixed spatial binning, seeds 0..9: permuting the
        # face list must not shift where samples land
        from scipy.stats import chisquare
        verts = np.array([[0, 0, 0], [2, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -2, 0]],
                         dtype=float)
        faces = np.array([[0, 1, 2], [0, 3, 4]])
        mesh_a = Mesh(verts, faces)
        mesh_b = Mesh(verts, faces[::-1].copy())

        def histogram(mesh):
            counts = np.zeros(4)
            for seed in range(10):
                pts = sample_mesh_surface(mesh, 1000, seed=seed).points
                quadrant = (pts[:, 0] > 0).astype(int) * 2 + (pts[:, 1] > 0).astype(int)
                counts += np.bincount(quadrant, minlength=4)
            return counts

        counts_a, counts_b = histogram(mesh_a), histogram(mesh_b)
        expected = (counts_a + counts_b) / 2
        keep = expected > 0
        stat, p_value = chisquare(counts_a[keep], expected[keep])
        assert p_value > 0.01, (counts_a, counts_b)


class TestGenerateSynthetic:
    def test_sphere_on_unit_sphere(self):
        cloud = generate_synthetic(0, 128, seed=0)
        radii = np.linalg.norm(cloud.points, axis=1)
        assert np.abs(radii - 1.0).max() < 1e-9

    def test_cube_on_boundary(self):
        cloud = generate_synthetic(1, 128, seed=1)
        on_face = np.isclose(np.abs(cloud.points), 1.0, atol=1e-9).any(axis=1)
        assert on_face.all()

    def test_labels_match_class(self):
        for class_id in range(len(SYNTHETIC_CLASSES)):
            assert generate_synthetic(class_id, 16, seed=2).label == class_id

    def test_deterministic(self):
        a = generate_synthetic(4, 64, seed=3, augment=True).points
        b = generate_synthetic(4, 64, seed=3, augment=True).points
        np.testing.assert_array_equal(a, b)

    def test_unknown_class_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic(8, 16, seed=0)

    def test_augmented_stays_finite_and_scaled(self):
        cloud = generate_synthetic(2, 64, seed=5, augment=True)
        assert np.isfinite(cloud.points).all()
        assert np.abs(cloud.points).max() < 2.0


class TestXyz:
    def test_two_points(self, tmp_path):
        path = tmp_path / "p.xyz"
        path.write_text("0 0 0\n1 2 3\n")
        cloud = load_xyz(path)
        assert cloud.points.shape == (2, 3)
        assert cloud.label is None

    def test_comment_only_rejected(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("# nothing here\n")
        with pytest.raises(ParseError):
            load_xyz(path)

    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        cloud = PointCloud(rng.normal(size=(50, 3)) * 100, label=5)
        path = tmp_path / "r.xyz"
        save_xyz(path, cloud)
        loaded = load_xyz(path)
        assert np.abs(loaded.points - cloud.points).max() == 0.0
        assert loaded.label == 5

    def test_inconsistent_labels_rejected(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0 1\n1 1 1 2\n")
        with pytest.raises(ParseError):
            load_xyz(path)

    def test_bad_token_line_number(self, tmp_path):
        path = tmp_path / "tok.xyz"
        path.write_text("0 0 0\n0 zero 0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_xyz(path)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(7)
        tensors = [("layer.w", rng.normal(size=(3, 4))),
                   ("layer.b", rng.normal(size=4)),
                   ("scalar", np.array(2.5))]
        path = tmp_path / "m.hemb"
        save_checkpoint(path, "dim = 4\n", tensors)
        ckpt = load_checkpoint(path)
        assert ckpt.config_text == "dim = 4\n"
        assert set(ckpt.tensors) == {"layer.w", "layer.b", "scalar"}
        for name, arr in tensors:
            assert ckpt.tensors[name].tobytes() == np.asarray(arr, dtype=float).tobytes()

    def test_empty_tensor_table(self, tmp_path):
        path = tmp_path / "e.hemb"
        save_checkpoint(path, "", [])
        assert load_checkpoint(path).tensors == {}

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.hemb"
        save_checkpoint(path, "x = 1\n", [("t", np.zeros(2))])
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "trunc.hemb"
        save_checkpoint(path, "x = 1\n", [("t", np.arange(8, dtype=float))])
        blob = path.read_bytes()
        path.write_bytes(blob[:-9])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "ver.hemb"
        save_checkpoint(path, "", [])
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_extent_overflow_rejected(self, tmp_path):
        import struct
        path = tmp_path / "ovf.hemb"
        payload = (CHECKPOINT_MAGIC + struct.pack("<I", 1) + struct.pack("<I", 0)
                   + struct.pack("<I", 1)
                   + struct.pack("<I", 1) + b"t" + struct.pack("<B", 2)
                   + struct.pack("<Q", 1 << 40) + struct.pack("<Q", 1 << 40))
        path.write_bytes(payload)
        with pytest.raises(CheckpointError, match="overflow"):
            load_checkpoint(path)
