import numpy as np
import pytest

from strainforge.errors import BundleIOError, ValidationError
from strainforge.imageio import (read_f32grid, read_image, read_pgm, read_sequence, write_f32grid,
                                 write_pgm)


def _img(shape=(10, 12), scale=255):
    rng = np.random.default_rng(0)
    return np.rint(rng.uniform(0, scale, size=shape))


@pytest.mark.parametrize("binary", [True, False])
@pytest.mark.parametrize("maxval", [255, 4095])
def test_pgm_round_trip(tmp_path, binary, maxval):
    a = _img(scale=maxval)
    write_pgm(tmp_path / "a.pgm", a, binary=binary, maxval=maxval)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), a)


def test_pgm_header_comments(tmp_path):
    a = _img((8, 8))
    body = " ".join(str(int(v)) for v in a.ravel())
    (tmp_path / "c.pgm").write_text(f"P2\n# made by hand\n8 # width\n8\n255\n{body}\n")
    assert np.array_equal(read_image(str(tmp_path / "c.pgm")), a)


def test_f32grid_round_trip(tmp_path):
    a = np.linspace(-1, 1, 99).reshape(9, 11).astype(np.float32)
    write_f32grid(tmp_path / "a.f32grid", a)
    raw = (tmp_path / "a.f32grid").read_bytes()
    assert raw.startswith(b"11 9\n") and len(raw) == 5 + 4 * 99
    assert np.array_equal(read_f32grid(tmp_path / "a.f32grid"), a)


def test_malformed_files(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P6\n8 8\n255\n" + bytes(192))
    with pytest.raises(BundleIOError):
        read_pgm(tmp_path / "x.pgm")
    (tmp_path / "t.pgm").write_bytes(b"P5\n8 8\n255\n" + bytes(10))
    with pytest.raises(BundleIOError):
        read_pgm(tmp_path / "t.pgm")
    (tmp_path / "t.f32grid").write_bytes(b"8 8\n" + bytes(12))
    with pytest.raises(BundleIOError):
        read_f32grid(tmp_path / "t.f32grid")
    with pytest.raises(BundleIOError):
        read_image(str(tmp_path / "a.png"))


def test_small_and_non_finite_rejected(tmp_path):
    write_f32grid(tmp_path / "s.f32grid", np.zeros((4, 20)))
    with pytest.raises(ValidationError):
        read_f32grid(tmp_path / "s.f32grid")
    a = np.zeros((8, 8))
    a[2, 2] = np.nan
    write_f32grid(tmp_path / "n.f32grid", a)
    with pytest.raises(ValidationError):
        read_f32grid(tmp_path / "n.f32grid")


def test_sequence_sorted_and_checked(tmp_path):
    for k in (2, 0, 1):
        write_f32grid(tmp_path / f"f{k}.f32grid", np.full((8, 8), float(k)))
    (tmp_path / "notes.txt").write_text("ignored")
    seq = read_sequence(str(tmp_path))
    assert [s[0, 0] for s in seq] == [0.0, 1.0, 2.0]
    write_f32grid(tmp_path / "f3.f32grid", np.zeros((9, 8)))
    with pytest.raises(ValidationError):
        read_sequence(str(tmp_path))
    with pytest.raises(BundleIOError):
        read_sequence(str(tmp_path / "missing"))
