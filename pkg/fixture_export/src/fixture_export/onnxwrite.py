"""Hand-rolled protobuf encoder producing ONNX model files.

Writes the small dialect the fixture models need: float32 initializers
carried as raw_data, int/ints/float attributes with explicit type tags,
typed value infos for graph inputs and outputs, and a single
default-domain opset entry. Field numbers follow onnx.proto3; no onnx
package is involved, so exports work in a minimal environment and
double as a cross-check of any independent reader.
"""

from __future__ import annotations

import struct

import numpy as np

# AttributeProto.AttributeType codes.
_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_INTS = 7

_ELEM_FLOAT32 = 1


def _varint(value: int) -> bytes:
    if value < 0:
        value += 1 << 64
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _tag(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _ld(field: int, payload: bytes) -> bytes:
    return _tag(field, 2) + _varint(len(payload)) + payload


def _pstr(field: int, text: str) -> bytes:
    return _ld(field, text.encode("utf-8"))


def _pint(field: int, value: int) -> bytes:
    return _tag(field, 0) + _varint(value)


def attr_int(name: str, value: int) -> bytes:
    return _pstr(1, name) + _pint(3, int(value)) + _pint(20, _ATTR_INT)


def attr_float(name: str, value: float) -> bytes:
    return _pstr(1, name) + _tag(2, 5) + struct.pack("<f", value) + _pint(20, _ATTR_FLOAT)


def attr_ints(name: str, values) -> bytes:
    body = b"".join(_pint(8, int(v)) for v in values)
    return _pstr(1, name) + body + _pint(20, _ATTR_INTS)


def tensor(name: str, array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    dims = b"".join(_pint(1, d) for d in arr.shape)
    return dims + _pint(2, _ELEM_FLOAT32) + _pstr(8, name) + _ld(9, arr.tobytes(order="C"))


def node(op_type: str, inputs, outputs, name: str = "", attrs=()) -> bytes:
    return (
        b"".join(_pstr(1, i) for i in inputs)
        + b"".join(_pstr(2, o) for o in outputs)
        + _pstr(3, name or op_type)
        + _pstr(4, op_type)
        + b"".join(_ld(5, a) for a in attrs)
    )


def tensor_value_info(name: str, dims) -> bytes:
    shape = b"".join(_ld(1, _pint(1, int(d))) for d in dims)
    tensor_type = _pint(1, _ELEM_FLOAT32) + _ld(2, shape)
    return _pstr(1, name) + _ld(2, _ld(1, tensor_type))


def graph(nodes, initializers, inputs, outputs, name: str = "net") -> bytes:
    return (
        b"".join(_ld(1, n) for n in nodes)
        + _pstr(2, name)
        + b"".join(_ld(5, t) for t in initializers)
        + b"".join(_ld(11, v) for v in inputs)
        + b"".join(_ld(12, v) for v in outputs)
    )


def model(graph_bytes: bytes, opset_version: int = 13) -> bytes:
    opset = _pint(2, opset_version)
    return (
        _pint(1, 8)
        + _pstr(2, "gepc-fixture-export")
        + _ld(7, graph_bytes)
        + _ld(8, opset)
    )
