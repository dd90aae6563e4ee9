"""Hand-built loader fixtures and their corruptions.

Byte layouts are written out field by field with ``struct`` so the
fixtures do not depend on the package's own writers.
"""

import struct

import numpy as np

from deepcat.errors import DataError, FormatError

# two 2x2 images, labels 3 and 1
IDX_PIXELS = bytes([0, 255, 128, 64, 1, 2, 3, 255])
IDX_LABELS = bytes([3, 1])


def idx_images(count=2, rows=2, cols=2, pixels=IDX_PIXELS, magic=0x00000803):
    return struct.pack(">IIII", magic, count, rows, cols) + pixels


def idx_labels(count=2, labels=IDX_LABELS, magic=0x00000801):
    return struct.pack(">II", magic, count) + labels


def cifar_record(label, fill=0):
    return bytes([label]) + bytes([fill]) * 3072


def write(tmp_path, name, payload):
    path = tmp_path / name
    if isinstance(payload, str):
        path.write_text(payload, encoding="utf-8")
    else:
        path.write_bytes(payload)
    return path


# corruption class -> (images bytes, labels bytes, expected error)
IDX_CORRUPTIONS = {
    "bad image magic": (idx_images(magic=0x00000802), idx_labels(), FormatError),
    "bad label magic": (idx_images(), idx_labels(magic=0x00000803), FormatError),
    "truncated header": (idx_images()[:10], idx_labels(), FormatError),
    "truncated pixels": (idx_images()[:-1], idx_labels(), FormatError),
    "trailing bytes": (idx_images() + b"\x00", idx_labels(), FormatError),
    "label count mismatch": (idx_images(), idx_labels(count=3, labels=IDX_LABELS + b"\x00"), FormatError),
}

CIFAR_CORRUPTIONS = {
    "short record": (cifar_record(7)[:-1], FormatError),
    "extra bytes": (cifar_record(7) + b"\x00", FormatError),
    "empty file": (b"", FormatError),
    "label above 9": (cifar_record(10), DataError),
}

HUMAN_VALID = "2, 1.0, 0.0\n0, 30, 20\n1, 0.25, 0.75\n"

HUMAN_CORRUPTIONS = {
    "negative value": "0, 30, -20\n",
    "duplicate index": "0, 30, 20\n0, 1, 0\n",
    "wrong column count": "0, 30, 20, 5\n",
    "non-numeric value": "0, thirty, 20\n",
    "probabilities not summing to 1": "0, 0.5, 0.2\n",
}


def assert_offset_reported(exc):
    assert "byte offset" in str(exc)


def expected_idx_images():
    return np.frombuffer(IDX_PIXELS, dtype=np.uint8).reshape(2, 1, 2, 2) / 255.0
