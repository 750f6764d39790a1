import json

import numpy as np
import pytest

from avssl.container import (
    ARRAYS_NAME,
    MANIFEST_NAME,
    SchemaVersionError,
    TruncatedArrayError,
    read_container,
    write_container,
)


def test_roundtrip_exact(tmp_path):
    arrays = {
        "a/clip": np.arange(24, dtype="<f4").reshape(2, 3, 4),
        "a/boxes": np.array([[0, 1, 2, 3]], dtype="<i4"),
        "b/wave": np.linspace(-1, 1, 7).astype("<f8"),
    }
    write_container(tmp_path / "c", {"kind": "test", "extra": 5}, arrays)
    manifest, back = read_container(tmp_path / "c")
    assert manifest["kind"] == "test" and manifest["extra"] == 5
    assert list(back) == list(arrays)
    for name in arrays:
        assert back[name].dtype == arrays[name].dtype
        assert np.array_equal(back[name], arrays[name])


def test_version_mismatch_rejected(tmp_path):
    write_container(tmp_path / "c", {}, {"x": np.zeros(3, dtype="<f4")})
    mpath = tmp_path / "c" / MANIFEST_NAME
    doc = json.loads(mpath.read_text())
    doc["schema_version"] = "2.0"
    mpath.write_text(json.dumps(doc))
    with pytest.raises(SchemaVersionError):
        read_container(tmp_path / "c")


def test_truncated_array_names_offender(tmp_path):
    arrays = {
        "sample-0/clip": np.ones(10, dtype="<f4"),
        "sample-1/clip": np.ones(10, dtype="<f4"),
    }
    write_container(tmp_path / "c", {}, arrays)
    bin_path = tmp_path / "c" / ARRAYS_NAME
    data = bin_path.read_bytes()
    bin_path.write_bytes(data[:-4])
    with pytest.raises(TruncatedArrayError, match="sample-1/clip"):
        read_container(tmp_path / "c")
