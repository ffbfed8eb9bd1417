"""Minimal ONNX support: a protobuf wire-format reader and a numpy executor.

Covers the subset of ONNX needed to run small image classifiers: Conv,
Relu, MaxPool, AveragePool, GlobalAveragePool, Flatten, Gemm, MatMul, Add,
Softmax (per-axis semantics), Reshape, and Concat, with float32 tensors and
int64 shape tensors. Nodes are executed in file order, which ONNX requires
to be topological. Anything outside this subset raises BackendError.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BackendError, InvalidInputError


@dataclass(frozen=True)
class OnnxNode:
    op_type: str
    inputs: tuple
    outputs: tuple
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OnnxModel:
    nodes: tuple
    initializers: dict
    inputs: tuple
    outputs: tuple


class _WireError(Exception):
    pass


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(data) or shift > 63:
            raise _WireError("truncated or oversized varint")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def _signed(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def _fields(data: bytes):
    """Yield (field_number, wire_type, raw_value) triples."""
    pos = 0
    while pos < len(data):
        key, pos = _read_varint(data, pos)
        number, wire = key >> 3, key & 0x07
        if wire == 0:
            value, pos = _read_varint(data, pos)
        elif wire == 1:
            if pos + 8 > len(data):
                raise _WireError("truncated fixed64")
            value, pos = data[pos : pos + 8], pos + 8
        elif wire == 2:
            length, pos = _read_varint(data, pos)
            if pos + length > len(data):
                raise _WireError("truncated length-delimited field")
            value, pos = data[pos : pos + length], pos + length
        elif wire == 5:
            if pos + 4 > len(data):
                raise _WireError("truncated fixed32")
            value, pos = data[pos : pos + 4], pos + 4
        else:
            raise _WireError(f"unsupported wire type {wire}")
        yield number, wire, value


def _collect(data: bytes) -> dict:
    out = {}
    for number, wire, value in _fields(data):
        out.setdefault(number, []).append((wire, value))
    return out


def _varint_list(entries) -> list:
    """Decode a repeated varint field, packed or not, as signed int64."""
    values = []
    for wire, value in entries:
        if wire == 0:
            values.append(_signed(value))
        elif wire == 2:
            pos = 0
            while pos < len(value):
                v, pos = _read_varint(value, pos)
                values.append(_signed(v))
        else:
            raise _WireError("unexpected wire type for repeated varint")
    return values


def _float32(wire, value) -> float:
    if wire != 5:
        raise _WireError("expected fixed32 float")
    return float(np.frombuffer(value, dtype="<f4")[0])


def _decode_tensor(data: bytes) -> tuple[str, np.ndarray]:
    f = _collect(data)
    dims = _varint_list(f.get(1, []))
    if not f.get(2):
        raise _WireError("tensor missing data_type")
    dtype_code = f[2][-1][1]
    name = f[8][-1][1].decode("utf-8") if f.get(8) else ""
    np_dtype = {1: "<f4", 6: "<i4", 7: "<i8"}.get(dtype_code)
    if np_dtype is None:
        raise _WireError(f"unsupported tensor data_type {dtype_code}")
    if f.get(9):
        arr = np.frombuffer(f[9][-1][1], dtype=np_dtype)
    elif dtype_code == 1 and f.get(4):
        chunks = []
        for wire, value in f[4]:
            if wire == 2:
                chunks.append(np.frombuffer(value, dtype="<f4"))
            else:
                chunks.append(np.array([_float32(wire, value)], dtype="<f4"))
        arr = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    elif dtype_code == 7 and f.get(7):
        arr = np.array(_varint_list(f[7]), dtype="<i8")
    elif dtype_code == 6 and f.get(5):
        arr = np.array(_varint_list(f[5]), dtype="<i4")
    else:
        raise _WireError(f"tensor '{name}' has no payload")
    count = 1
    for d in dims:
        count *= d
    if arr.size != count:
        raise _WireError(f"tensor '{name}' payload size {arr.size} != dims product {count}")
    return name, arr.reshape(dims).copy()


_ATTR_TYPES = {1: "f", 2: "i", 3: "s", 4: "t", 6: "floats", 7: "ints", 8: "strings"}


def _decode_attr(data: bytes) -> tuple[str, object]:
    f = _collect(data)
    if not f.get(1):
        raise _WireError("attribute missing name")
    name = f[1][-1][1].decode("utf-8")
    kind = _ATTR_TYPES.get(f[20][-1][1]) if f.get(20) else None
    if kind is None:
        for code, label in ((5, "t"), (8, "ints"), (7, "floats"), (4, "s"), (3, "i"), (2, "f")):
            if f.get(code):
                kind = label
                break
    if kind == "f":
        return name, _float32(*f[2][-1])
    if kind == "i":
        return name, _signed(f[3][-1][1])
    if kind == "s":
        return name, f[4][-1][1].decode("utf-8")
    if kind == "t":
        return name, _decode_tensor(f[5][-1][1])[1]
    if kind == "floats":
        values = []
        for wire, value in f.get(7, []):
            if wire == 2:
                values.extend(np.frombuffer(value, dtype="<f4").tolist())
            else:
                values.append(_float32(wire, value))
        return name, values
    if kind == "ints":
        return name, _varint_list(f.get(8, []))
    if kind == "strings":
        return name, [v.decode("utf-8") for _, v in f.get(9, [])]
    raise _WireError(f"attribute '{name}' has unsupported type")


def _decode_node(data: bytes) -> OnnxNode:
    f = _collect(data)
    inputs = tuple(v.decode("utf-8") for _, v in f.get(1, []))
    outputs = tuple(v.decode("utf-8") for _, v in f.get(2, []))
    op_type = f[4][-1][1].decode("utf-8") if f.get(4) else ""
    attrs = dict(_decode_attr(v) for _, v in f.get(5, []))
    return OnnxNode(op_type, inputs, outputs, attrs)


def _value_info_name(data: bytes) -> str:
    f = _collect(data)
    return f[1][-1][1].decode("utf-8") if f.get(1) else ""


def parse_model(data: bytes, source: str = "<bytes>") -> OnnxModel:
    try:
        top = _collect(data)
        if not top.get(7):
            raise _WireError("no graph in model")
        g = _collect(top[7][-1][1])
        nodes = tuple(_decode_node(v) for _, v in g.get(1, []))
        initializers = {}
        for _, v in g.get(5, []):
            name, arr = _decode_tensor(v)
            initializers[name] = arr
        input_names = [_value_info_name(v) for _, v in g.get(11, [])]
        inputs = tuple(n for n in input_names if n and n not in initializers)
        outputs = tuple(_value_info_name(v) for _, v in g.get(12, []))
    except _WireError as exc:
        raise BackendError(f"{source}: malformed ONNX model ({exc})") from exc
    if not nodes:
        raise BackendError(f"{source}: model has no nodes")
    if not outputs:
        raise BackendError(f"{source}: model declares no outputs")
    return OnnxModel(nodes, initializers, inputs, outputs)


def load_model(path) -> OnnxModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise BackendError(f"{path}: cannot read model file ({exc})") from exc
    return parse_model(data, source=str(path))


def _int_attr(node, name, default):
    return int(node.attrs.get(name, default))


def _ints_attr(node, name, default):
    return [int(v) for v in node.attrs.get(name, default)]


def _pool_geometry(node, x, kernel_default=None):
    kh, kw = _ints_attr(node, "kernel_shape", kernel_default)
    sh, sw = _ints_attr(node, "strides", [1, 1])
    pt, pl, pb, pr = _ints_attr(node, "pads", [0, 0, 0, 0])
    return kh, kw, sh, sw, pt, pl, pb, pr


def _windows(xp, kh, kw, sh, sw, dh=1, dw=1):
    oh = (xp.shape[2] - (dh * (kh - 1) + 1)) // sh + 1
    ow = (xp.shape[3] - (dw * (kw - 1) + 1)) // sw + 1
    if oh < 1 or ow < 1:
        raise BackendError(f"pooling/conv window larger than input {xp.shape[2:]}")
    for i in range(kh):
        for j in range(kw):
            yield i, j, xp[
                :, :,
                i * dh : i * dh + (oh - 1) * sh + 1 : sh,
                j * dw : j * dw + (ow - 1) * sw + 1 : sw,
            ]


def _op_conv(node, ins):
    x, w = ins[0], ins[1]
    b = ins[2] if len(ins) > 2 else None
    group = _int_attr(node, "group", 1)
    kh, kw = w.shape[2], w.shape[3]
    sh, sw = _ints_attr(node, "strides", [1, 1])
    pt, pl, pb, pr = _ints_attr(node, "pads", [0, 0, 0, 0])
    dh, dw = _ints_attr(node, "dilations", [1, 1])
    if x.ndim != 4 or w.ndim != 4:
        raise BackendError("Conv expects NCHW input and OIHW weights")
    if x.shape[1] != w.shape[1] * group or w.shape[0] % group:
        raise BackendError(
            f"Conv channel mismatch: input {x.shape[1]}, weights {tuple(w.shape)}, group {group}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cg, mg = w.shape[1], w.shape[0] // group
    pieces = []
    for g in range(group):
        xs = xp[:, g * cg : (g + 1) * cg]
        ws = w[g * mg : (g + 1) * mg]
        acc = None
        for i, j, win in _windows(xs, kh, kw, sh, sw, dh, dw):
            term = np.einsum("nchw,mc->nmhw", win, ws[:, :, i, j], dtype=np.float32)
            acc = term if acc is None else acc + term
        pieces.append(acc)
    y = np.concatenate(pieces, axis=1)
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1).astype(np.float32)
    return y.astype(np.float32, copy=False)


def _op_maxpool(node, ins):
    (x,) = ins
    kh, kw, sh, sw, pt, pl, pb, pr = _pool_geometry(node, x)
    xp = np.pad(
        x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf
    )
    acc = None
    for _, _, win in _windows(xp, kh, kw, sh, sw):
        acc = win if acc is None else np.maximum(acc, win)
    return acc.astype(np.float32, copy=False)


def _op_averagepool(node, ins):
    (x,) = ins
    kh, kw, sh, sw, pt, pl, pb, pr = _pool_geometry(node, x)
    include_pad = _int_attr(node, "count_include_pad", 0)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    total = None
    for _, _, win in _windows(xp, kh, kw, sh, sw):
        total = win.astype(np.float64) if total is None else total + win
    if include_pad:
        div = float(kh * kw)
    else:
        ones = np.pad(
            np.ones((1, 1) + x.shape[2:], dtype=np.float64),
            ((0, 0), (0, 0), (pt, pb), (pl, pr)),
        )
        div = None
        for _, _, win in _windows(ones, kh, kw, sh, sw):
            div = win.copy() if div is None else div + win
    return (total / div).astype(np.float32)


def _op_global_average_pool(node, ins):
    (x,) = ins
    return x.mean(axis=(2, 3), keepdims=True).astype(np.float32)


def _op_relu(node, ins):
    return np.maximum(ins[0], 0.0).astype(np.float32, copy=False)


def _op_flatten(node, ins):
    (x,) = ins
    axis = _int_attr(node, "axis", 1)
    if axis < 0:
        axis += x.ndim
    lead = int(np.prod(x.shape[:axis], dtype=np.int64))
    return x.reshape(lead, -1)


def _op_gemm(node, ins):
    a, b = ins[0], ins[1]
    c = ins[2] if len(ins) > 2 else None
    alpha = float(node.attrs.get("alpha", 1.0))
    beta = float(node.attrs.get("beta", 1.0))
    if _int_attr(node, "transA", 0):
        a = a.T
    if _int_attr(node, "transB", 0):
        b = b.T
    y = alpha * (a @ b)
    if c is not None:
        y = y + beta * c
    return y.astype(np.float32, copy=False)


def _op_matmul(node, ins):
    return (ins[0] @ ins[1]).astype(np.float32, copy=False)


def _op_add(node, ins):
    return (ins[0] + ins[1]).astype(np.float32, copy=False)


def _op_softmax(node, ins):
    (x,) = ins
    axis = _int_attr(node, "axis", -1)
    shifted = x.astype(np.float64) - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)


def _op_reshape(node, ins):
    x, shape = ins[0], ins[1]
    allowzero = _int_attr(node, "allowzero", 0)
    dims = [int(s) for s in np.asarray(shape).ravel()]
    resolved = []
    for idx, s in enumerate(dims):
        if s == 0 and not allowzero:
            if idx >= x.ndim:
                raise BackendError("Reshape dim 0 refers past input rank")
            resolved.append(x.shape[idx])
        else:
            resolved.append(s)
    return x.reshape(resolved)


def _op_concat(node, ins):
    if "axis" not in node.attrs:
        raise BackendError("Concat requires an axis attribute")
    return np.concatenate(ins, axis=_int_attr(node, "axis", 0)).astype(
        np.float32, copy=False
    )


_OPS = {
    "Conv": _op_conv,
    "Relu": _op_relu,
    "MaxPool": _op_maxpool,
    "AveragePool": _op_averagepool,
    "GlobalAveragePool": _op_global_average_pool,
    "Flatten": _op_flatten,
    "Gemm": _op_gemm,
    "MatMul": _op_matmul,
    "Add": _op_add,
    "Softmax": _op_softmax,
    "Reshape": _op_reshape,
    "Concat": _op_concat,
}


def run_model(model: OnnxModel, feeds: dict, output_names=None) -> dict:
    """Execute the graph on the given feeds; returns name -> array."""
    values = dict(model.initializers)
    for name, arr in feeds.items():
        if name not in model.inputs:
            raise InvalidInputError(f"'{name}' is not a graph input {list(model.inputs)}")
        values[name] = np.asarray(arr, dtype=np.float32)
    missing = [n for n in model.inputs if n not in values]
    if missing:
        raise InvalidInputError(f"missing feeds for graph inputs {missing}")
    for node in model.nodes:
        fn = _OPS.get(node.op_type)
        if fn is None:
            raise BackendError(f"unsupported op '{node.op_type}'")
        ins = []
        for name in node.inputs:
            if name == "":
                ins.append(None)
            elif name in values:
                ins.append(values[name])
            else:
                raise BackendError(
                    f"node '{node.op_type}' consumes '{name}' before it is produced"
                )
        result = fn(node, ins)
        if not isinstance(result, tuple):
            result = (result,)
        for name, value in zip(node.outputs, result):
            values[name] = value
    wanted = tuple(output_names) if output_names is not None else model.outputs
    out = {}
    for name in wanted:
        if name not in values:
            raise BackendError(f"requested output '{name}' was not produced")
        out[name] = values[name]
    return out
