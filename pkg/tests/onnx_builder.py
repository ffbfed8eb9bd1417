"""Hand-rolled protobuf encoder for building ONNX test models.

Kept independent of the package's reader so the two sides cross-check the
wire format.
"""

import struct

import numpy as np


def varint(v):
    if v < 0:
        v += 1 << 64
    out = bytearray()
    while True:
        byte = v & 0x7F
        v >>= 7
        if v:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def tag(field, wire):
    return varint((field << 3) | wire)


def ld(field, payload):
    return tag(field, 2) + varint(len(payload)) + payload


def pstr(field, text):
    return ld(field, text.encode())


def pint(field, v):
    return tag(field, 0) + varint(v)


def tensor_proto(name, arr):
    arr = np.asarray(arr)
    if arr.dtype == np.int64:
        dt, raw = 7, arr.astype("<i8").tobytes()
    else:
        dt, raw = 1, arr.astype("<f4").tobytes()
    dims = b"".join(pint(1, d) for d in arr.shape)
    return dims + pint(2, dt) + pstr(8, name) + ld(9, raw)


def attr_int(name, v):
    return ld(1, name.encode()) + pint(3, v) + pint(20, 2)


def attr_float(name, v):
    return ld(1, name.encode()) + tag(2, 5) + struct.pack("<f", v) + pint(20, 1)


def attr_ints(name, vals, packed=False):
    if packed:
        body = ld(8, b"".join(varint(v) for v in vals))
    else:
        body = b"".join(pint(8, v) for v in vals)
    return ld(1, name.encode()) + body + pint(20, 7)


def node_proto(op, inputs, outputs, attrs=()):
    return (
        b"".join(pstr(1, i) for i in inputs)
        + b"".join(pstr(2, o) for o in outputs)
        + pstr(4, op)
        + b"".join(ld(5, a) for a in attrs)
    )


def value_info(name):
    return pstr(1, name)


def graph_proto(nodes, inits, inputs, outputs):
    return (
        b"".join(ld(1, n) for n in nodes)
        + pstr(2, "g")
        + b"".join(ld(5, t) for t in inits)
        + b"".join(ld(11, value_info(i)) for i in inputs)
        + b"".join(ld(12, value_info(o)) for o in outputs)
    )


def model_proto(graph):
    opset = pint(2, 13)
    return pint(1, 8) + ld(7, graph) + ld(8, opset)
