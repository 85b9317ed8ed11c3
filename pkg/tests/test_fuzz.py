import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fuzzing import WEIGHTS, run_fuzz
from mvforensics.bitparse import decode_stream, split_annexb
from mvforensics.errors import FormatError, MvError
from mvforensics.evalkit import EvalMatrix
from mvforensics.ingest import decode_ppm
from mvforensics.motionfield import load_fields
from mvforensics.net import _decode_checkpoint


@pytest.mark.parametrize("target", sorted(WEIGHTS))
def test_short_fuzz_run_is_clean(target):
    res = run_fuzz(300 if target == "stream" else 1000, seed=11, targets=[target])
    assert not res.crashes, res.crashes[0][2]


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_random_bytes_never_escape_as_untyped_errors(data):
    for fn in (decode_stream, decode_ppm, _decode_checkpoint, split_annexb):
        try:
            fn(data)
        except MvError:
            pass


def test_matrix_csv_with_nul_byte():
    with pytest.raises(FormatError):
        EvalMatrix.from_csv("t,size,a\nx,,0\x00.5\n")


def write_fields(d, index: bytes, npy: bytes):
    d.mkdir(exist_ok=True)
    (d / "index.json").write_bytes(index)
    (d / "000000.npy").write_bytes(npy)


def npy_bytes(arr):
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


@pytest.mark.parametrize("index", [b'{"width": 1e400, "height": 8, "frame_types": ["P"]}',
                                   b'{"width": -8, "height": 8, "frame_types": ["P"]}',
                                   b'{"width": 8, "height": 8, "frame_types": 5}'])
def test_field_index_overflow_and_nonsense(tmp_path, index):
    write_fields(tmp_path, index, npy_bytes(np.zeros((8, 2, 2), np.float32)))
    with pytest.raises(FormatError):
        load_fields(tmp_path)


@pytest.mark.parametrize("planes", [
    np.full((8, 2, 2), np.nan, np.float32),
    np.full((8, 2, 2), 1e30, np.float32),
    np.full((8, 2, 2), 0.5, np.float32),
    np.zeros((8, 2, 2), np.complex64),
])
def test_field_planes_with_bad_values(tmp_path, planes):
    write_fields(tmp_path, b'{"width": 8, "height": 8, "frame_types": ["P"]}', npy_bytes(planes))
    with pytest.raises(FormatError):
        load_fields(tmp_path)


def test_npy_with_broken_header(tmp_path):
    good = npy_bytes(np.zeros((8, 2, 2), np.float32))
    write_fields(tmp_path, b'{"width": 8, "height": 8, "frame_types": ["P"]}', good[:60])
    with pytest.raises(FormatError):
        load_fields(tmp_path)
