import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from orbifold_ma import build_grid, calibrated_metric
from orbifold_ma.calculus import HermitianField
from orbifold_ma.io import (HEADER, FormatError, atomic_write_text, field_from_bytes,
                            field_from_csv, field_to_bytes, field_to_csv, hermitian_from_bytes,
                            hermitian_to_bytes, load_field, load_hermitian, save_field,
                            save_hermitian)
from orbifold_ma.orbifold import GridField

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(arrays(float, (8, 8), elements=finite))
def test_field_bytes_round_trip_bit_exact(vals):
    g = build_grid(1, 8, "Z2")
    f = GridField(g, vals)
    back = field_from_bytes(field_to_bytes(f))
    assert back.grid.group.name == "Z2"
    assert back.values.tobytes() == f.values.tobytes()


def test_header_layout():
    g = build_grid(2, 4, "Z4")
    data = field_to_bytes(g.zeros())
    assert HEADER.size == 32 and len(data) == 32 + 8 * g.size
    magic, n, res, gid, kind = HEADER.unpack_from(data)
    assert (magic, n, res, gid, kind) == (b"ORBFLD01", 2, 4, g.group.group_id, 0)


def test_hermitian_round_trip(tmp_path, rng):
    g = build_grid(2, 4)
    X = rng.standard_normal(g.shape + (2, 2)) + 1j * rng.standard_normal(g.shape + (2, 2))
    h = HermitianField(g, X + np.conj(np.swapaxes(X, -1, -2)))
    save_hermitian(tmp_path / "h.bin", h)
    back = load_hermitian(tmp_path / "h.bin", g)
    assert back.coeffs.tobytes() == h.coeffs.tobytes()
    assert hermitian_from_bytes(hermitian_to_bytes(calibrated_metric(g))).is_constant()


def test_file_round_trip(tmp_path, rng):
    g = build_grid(1, 16)
    f = GridField(g, rng.standard_normal(g.shape))
    save_field(tmp_path / "f.bin", f)
    assert load_field(tmp_path / "f.bin").values.tobytes() == f.values.tobytes()


def test_bad_inputs_rejected():
    g = build_grid(1, 8)
    data = field_to_bytes(g.zeros())
    with pytest.raises(FormatError):
        field_from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(FormatError):
        field_from_bytes(data[:-8])
    with pytest.raises(FormatError):
        field_from_bytes(data[:10])
    with pytest.raises(FormatError):
        field_from_bytes(data, build_grid(1, 16))
    with pytest.raises(FormatError):
        hermitian_from_bytes(data)


def test_csv_round_trip(rng):
    g = build_grid(1, 8)
    f = GridField(g, rng.standard_normal(g.shape))
    text = field_to_csv(f)
    assert text.splitlines()[0] == "ix1,iy1,value"
    assert field_from_csv(text, g).values.tobytes() == f.values.tobytes()
    with pytest.raises(FormatError):
        field_from_csv("\n".join(text.splitlines()[:-1]) + "\n", g)


def test_atomic_write_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        atomic_write_text(tmp_path / "missing" / "a.txt", "x")
    assert not (tmp_path / "missing").exists()
    atomic_write_text(tmp_path / "a.txt", "x")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.txt"]
