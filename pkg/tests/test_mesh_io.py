import numpy as np
import pytest

from lts.utils import mesh_io


def _assert_same_mesh(a, b):
    assert a.dim == b.dim
    for name in ("volume", "centroid", "char_length", "face_left", "face_right", "face_area",
                 "face_normal", "face_bc", "face_dl", "face_dr", "cell_faces", "cell_nbrs"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_text_export_is_exact(skewed_mesh, tmp_path):
    path = tmp_path / "mesh.txt"
    mesh_io.write_text(skewed_mesh, path)
    assert path.read_text().startswith("lts-mesh 1 2 ")
    _assert_same_mesh(skewed_mesh, mesh_io.read_text(path))


def test_binary_export_is_exact(refined_line_mesh, tmp_path):
    path = tmp_path / "mesh.bin"
    mesh_io.write_binary(refined_line_mesh, path)
    assert path.read_bytes()[:4] == b"LTSM"
    _assert_same_mesh(refined_line_mesh, mesh_io.read_binary(path))


def test_bad_files_rejected(tmp_path):
    text = tmp_path / "bad.txt"
    text.write_text("not-a-mesh 1 1 0 0\n")
    with pytest.raises(ValueError, match="not an lts-mesh"):
        mesh_io.read_text(text)
    binary = tmp_path / "bad.bin"
    binary.write_bytes(b"LT")
    with pytest.raises(ValueError, match="truncated"):
        mesh_io.read_binary(binary)
