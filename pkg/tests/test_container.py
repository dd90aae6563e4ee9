import json
import struct

import numpy as np
import pytest

from deepcat import featurenet as fn
from deepcat.container import (
    MAGIC,
    ModelContainer,
    decode,
    encode,
    load_model,
    save_model,
)
from deepcat.errors import FormatError
from deepcat.heads import CategorizationHead


def model():
    net = fn.build([fn.dense(3, 5), fn.relu(), fn.dense(5, 4)], seed=1)
    head = CategorizationHead("prototype", 3, 4, covariance="axis", seed=2)
    head.log_var.data = np.random.default_rng(3).normal(size=(3, 4))
    return net, head


def test_round_trip_within_float32_rounding(tmp_path):
    net, head = model()
    save_model(tmp_path / "m.dcm", net, head, {"train.seed": 0})
    container = load_model(tmp_path / "m.dcm")
    assert container.config == {"train.seed": 0}
    net2, head2 = container.build()
    for a, b in zip(net.parameters() + head.parameters(), net2.parameters() + head2.parameters()):
        assert a.name == b.name and b.data.dtype == np.float64
        np.testing.assert_array_equal(b.data, a.data.astype(np.float32).astype(np.float64))
        # float32 rounding is at most half an ulp of the float32 value
        assert np.all(np.abs(b.data - a.data) <= np.spacing(np.abs(a.data).astype(np.float32)) / 2)
    assert head2.config() == head.config()


def test_serialization_is_deterministic():
    net, head = model()
    assert ModelContainer.from_model(net, head).to_bytes() == ModelContainer.from_model(net, head).to_bytes()


def raw_container():
    net, head = model()
    return ModelContainer.from_model(net, head).to_bytes()


def split_raw(raw):
    _, version, n = struct.unpack_from("<4sII", raw)
    return json.loads(raw[12 : 12 + n]), raw[12 + n :]


def test_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        decode(b"XXXX" + raw_container()[4:])


def test_unsupported_version_names_supported():
    header, payload = split_raw(raw_container())
    with pytest.raises(FormatError, match=r"supported versions: \[1\]"):
        decode(encode(header, payload, version=2))


def test_truncated_file():
    raw = raw_container()
    for cut in (5, 40, len(raw) - 3):
        with pytest.raises(FormatError):
            decode(raw[:cut])


def test_overlapping_offsets():
    header, payload = split_raw(raw_container())
    header["manifest"][1]["offset"] = header["manifest"][0]["offset"] + 4
    with pytest.raises(FormatError, match="overlap"):
        decode(encode(header, payload))


def test_duplicate_names():
    header, payload = split_raw(raw_container())
    header["manifest"][1]["name"] = header["manifest"][0]["name"]
    with pytest.raises(FormatError, match="unique"):
        decode(encode(header, payload))


def test_span_outside_payload():
    header, payload = split_raw(raw_container())
    header["manifest"][-1]["offset"] = len(payload)
    with pytest.raises(FormatError, match="outside payload"):
        decode(encode(header, payload))


def test_unreadable_header():
    raw = raw_container()
    with pytest.raises(FormatError, match="header"):
        decode(raw[:12] + b"{" * 20 + raw[32:])


def test_manifest_must_match_model():
    header, payload = split_raw(raw_container())
    header["manifest"] = header["manifest"][:-1]
    with pytest.raises(FormatError, match="do not match"):
        decode(encode(header, payload)).build()


def test_magic_constant():
    assert raw_container()[:4] == MAGIC == b"DCM1"
