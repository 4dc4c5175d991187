import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sacanet import stf
from sacanet.tensor import Tensor


def test_layout_is_header_line_then_little_endian_payload(tmp_path):
    path = tmp_path / "a.stf"
    stf.save(path, np.array([[1.0, 2.0, 3.0]]), "f32")
    raw = path.read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert json.loads(header) == {"shape": [1, 3], "dtype": "f32"}
    assert payload == np.array([1, 2, 3], dtype="<f4").tobytes()
    assert len(payload) == 12


@given(
    hnp.arrays(
        st.sampled_from([np.dtype("<f4"), np.dtype("<f8")]),
        hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=4),
        elements=st.floats(width=32, allow_nan=True, allow_infinity=True),
    )
)
def test_float_round_trip_is_bit_exact(arr):
    import tempfile
    from pathlib import Path

    name = "f32" if arr.dtype.itemsize == 4 else "f64"
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.stf"
        stf.save(path, arr, name)
        back = stf.load(path)
        assert back.shape == arr.shape and back.dtype == arr.dtype
        assert back.tobytes() == arr.tobytes()
        stf.save(path, back, name)
        assert stf.load(path).tobytes() == arr.tobytes()


def test_integer_dtypes(tmp_path):
    labels = np.array([[0, 3], [255, 1]], dtype=np.uint8)
    stf.save(tmp_path / "l.stf", labels, "u8")
    back = stf.load(tmp_path / "l.stf")
    assert back.dtype == np.uint8 and np.array_equal(back, labels)
    stf.save(tmp_path / "i.stf", np.array([-5, 7]), "i32")
    assert stf.load(tmp_path / "i.stf").tolist() == [-5, 7]


def test_tensor_input_and_f32_storage(tmp_path):
    t = Tensor([0.1, 0.2])
    stf.save(tmp_path / "t.stf", t)
    assert np.array_equal(stf.load(tmp_path / "t.stf"), np.array([0.1, 0.2], dtype=np.float32))


def test_named_records_with_config(tmp_path):
    params = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1e-300, -2.5])}
    stf.save_named(tmp_path / "p.stf", params, config={"k_classes": 4})
    back, cfg = stf.load_named(tmp_path / "p.stf")
    assert cfg == {"k_classes": 4}
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


@pytest.mark.parametrize(
    "content",
    [b"", b"not json\n", b'{"shape": [4], "dtype": "f32"}\n\x00\x00', b'{"shape": [1], "dtype": "c64"}\n\x00' * 8],
)
def test_malformed_files_raise_stf_error(tmp_path, content):
    path = tmp_path / "bad.stf"
    path.write_bytes(content)
    with pytest.raises(stf.STFError):
        stf.load(path)


def test_stf_error_is_an_io_error():
    assert issubclass(stf.STFError, OSError)


def test_unnamed_record_in_parameter_file(tmp_path):
    stf.save(tmp_path / "x.stf", np.zeros(2))
    with pytest.raises(stf.STFError):
        stf.load_named(tmp_path / "x.stf")
