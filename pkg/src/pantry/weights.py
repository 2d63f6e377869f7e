"""Parameter container files.

Layout: an ASCII header, then raw little-endian float32 payloads::

    PANTRY-WEIGHTS 1
    meta <key> <json value>
    tensor <name> <d0>x<d1>x... float32 <offset> <nbytes>
    end

``offset`` counts from the first byte after the ``end`` line. Metadata
records how to rebuild the graph: ``arch``, ``num_classes``, ``input_size``,
``head`` (``original`` or ``replaced``) and optionally ``labels``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pantry.errors import DecodeError, ShapeError, ValidationError
from pantry.resnet import LayerGraph, build_graph, replace_head
from pantry.tensor.core import Tensor

MAGIC = "PANTRY-WEIGHTS 1"
_DTYPE = np.dtype("<f4")


@dataclass
class WeightsFile:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def graph_meta(graph: LayerGraph, labels=None) -> dict:
    meta = {
        "arch": graph.arch,
        "num_classes": graph.num_classes,
        "input_size": graph.input_shape[1],
        "head": "original" if graph.base_size is None else "replaced",
    }
    if labels is not None:
        meta["labels"] = list(labels)
    return meta


def save_weights(path, graph: LayerGraph, labels=None) -> None:
    if not graph.params:
        raise ValidationError("cannot save an uninitialized graph")
    lines = [MAGIC]
    for key, value in graph_meta(graph, labels).items():
        lines.append(f"meta {key} {json.dumps(value)}")
    payloads, offset = [], 0
    for name, shape in graph.param_shapes().items():
        data = np.ascontiguousarray(graph.params[name].data, dtype=_DTYPE)
        raw = data.tobytes()
        dims = "x".join(str(d) for d in shape)
        lines.append(f"tensor {name} {dims} float32 {offset} {len(raw)}")
        payloads.append(raw)
        offset += len(raw)
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for raw in payloads:
            fh.write(raw)


def read_weights(path) -> WeightsFile:
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(MAGIC.encode() + b"\n"):
        raise DecodeError(f"{path}: not a pantry weights file")
    end = blob.find(b"\nend\n")
    if end < 0:
        raise DecodeError(f"{path}: header has no end marker")
    payload = memoryview(blob)[end + len(b"\nend\n"):]
    result = WeightsFile({})
    for lineno, line in enumerate(blob[:end].decode("ascii").splitlines()[1:], start=2):
        parts = line.split(" ", 2)
        if parts[0] == "meta" and len(parts) == 3:
            try:
                result.meta[parts[1]] = json.loads(parts[2])
            except json.JSONDecodeError as exc:
                raise DecodeError(f"{path}:{lineno}: bad metadata value ({exc})") from None
            continue
        fields = line.split()
        if fields[0] != "tensor" or len(fields) != 6 or fields[3] != "float32":
            raise DecodeError(f"{path}:{lineno}: malformed header line {line!r}")
        name, dims, offset, nbytes = fields[1], fields[2], int(fields[4]), int(fields[5])
        shape = tuple(int(d) for d in dims.split("x"))
        if nbytes != int(np.prod(shape)) * _DTYPE.itemsize or offset + nbytes > len(payload):
            raise DecodeError(f"{path}:{lineno}: tensor {name!r} extends past the payload or has the wrong size")
        result.tensors[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=_DTYPE).reshape(shape)
    return result


def load_into(graph: LayerGraph, weights: WeightsFile) -> LayerGraph:
    """Copy tensors into ``graph``; every parameter must be present with its exact shape."""
    expected = graph.param_shapes()
    missing = sorted(set(expected) - set(weights.tensors))
    extra = sorted(set(weights.tensors) - set(expected))
    if missing or extra:
        raise ShapeError(f"weights do not match graph: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, shape in expected.items():
        data = weights.tensors[name]
        if data.shape != tuple(shape):
            raise ShapeError(f"{name}: file has shape {data.shape}, graph expects {tuple(shape)}")
        if name in graph.params:
            graph.params[name].data = data.astype(graph.dtype)
        else:
            graph.params[name] = Tensor(data.astype(graph.dtype))
    if graph.base_size is not None:
        base = set(graph.base_param_names())
        for name, tensor in graph.params.items():
            tensor.requires_grad = name not in base
    return graph


def load_weights(path) -> tuple[LayerGraph, WeightsFile]:
    """Rebuild the graph described by a weights file and fill its parameters."""
    weights = read_weights(path)
    meta = weights.meta
    try:
        arch, num_classes, input_size = meta["arch"], int(meta["num_classes"]), int(meta["input_size"])
    except (KeyError, TypeError, ValueError):
        raise DecodeError(f"{path}: metadata must include arch, num_classes and input_size") from None
    if meta.get("head") == "replaced":
        graph = replace_head(build_graph(arch, 1, input_size, init=False), num_classes)
    else:
        graph = build_graph(arch, num_classes, input_size, init=False)
    return load_into(graph, weights), weights
