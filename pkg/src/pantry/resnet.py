"""ResNet50 / micro-ResNet layer graphs, head surgery and shape audits.

Graphs are flat lists of :class:`LayerSpec` in topological order. Each layer
names its producers by index (``-1`` is the graph input); a ``residual_add``
has two producers, the second being the shortcut. Only conv and dense layers
count toward the depth tally, and projection shortcuts are excluded so that
ResNet50 comes out at exactly ``1+9+12+18+9+1=50``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from pantry.errors import ShapeError, StateError, StructureError
from pantry.tensor import ops
from pantry.tensor.core import Tensor

KINDS = ("conv", "maxpool", "avgpool", "flatten", "dense", "softmax", "residual_add")
GROUPS = ("stem", "stage1", "stage2", "stage3", "stage4", "head")

RESNET50_STAGES = ((64, 256, 3), (128, 512, 4), (256, 1024, 6), (512, 2048, 3))
MICRO_STAGES = ((8, 32, 2), (16, 64, 2))


@dataclass
class LayerSpec:
    name: str
    kind: str
    group: str
    inputs: tuple[int, ...]
    in_channels: int = 0  # conv: input channels; dense: input features
    filters: int = 0  # conv: output channels; dense: units
    kernel: int = 0  # 0 on avgpool means global pooling
    stride: int = 1
    padding: int = 0
    relu: bool = False
    shortcut: bool = False

    @property
    def counted(self) -> bool:
        return self.kind in ("conv", "dense") and not self.shortcut

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "conv":
            return {
                f"{self.name}.weight": (self.filters, self.in_channels, self.kernel, self.kernel),
                f"{self.name}.bias": (self.filters,),
            }
        if self.kind == "dense":
            return {f"{self.name}.weight": (self.filters, self.in_channels), f"{self.name}.bias": (self.filters,)}
        return {}

    def describe(self) -> str:
        if self.kind == "conv":
            return f"{self.kernel}x{self.kernel},{self.filters} s{self.stride} p{self.padding}"
        if self.kind == "maxpool":
            return f"{self.kernel}x{self.kernel} s{self.stride} p{self.padding}"
        if self.kind == "avgpool":
            return "global" if self.kernel == 0 else f"{self.kernel}x{self.kernel} s{self.stride}"
        if self.kind == "dense":
            return f"{self.filters} units"
        if self.kind == "residual_add":
            return f"+ layer {self.inputs[1]}"
        return ""


@dataclass
class LayerGraph:
    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]  # (C, H, W)
    params: dict[str, Tensor] = field(default_factory=dict)
    base_size: int | None = None  # set by replace_head: layers[:base_size] are the base
    arch: str = "custom"
    dtype: type = np.float32

    @property
    def num_classes(self) -> int:
        dense = [layer for layer in self.layers if layer.kind == "dense"]
        if not dense:
            raise StructureError("graph has no dense layer")
        return dense[-1].filters

    @property
    def shortcut_edges(self) -> list[tuple[int, int]]:
        return [(layer.inputs[1], i) for i, layer in enumerate(self.layers) if layer.kind == "residual_add"]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    def base_param_names(self) -> list[str]:
        if self.base_size is None:
            raise StructureError("graph has no base/head boundary; apply replace_head first")
        return [n for layer in self.layers[: self.base_size] for n in layer.param_shapes()]

    def head_param_names(self) -> list[str]:
        if self.base_size is None:
            raise StructureError("graph has no base/head boundary; apply replace_head first")
        return [n for layer in self.layers[self.base_size:] for n in layer.param_shapes()]

    def initialize(self, seed: int = 0) -> "LayerGraph":
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            _init_layer(self, layer, rng)
        return self

    def forward(self, x) -> Tensor:
        """Run the graph; returns the final layer's output (softmax probabilities)."""
        if not self.params:
            raise StateError("graph parameters are not initialized")
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.shape[1:] != tuple(self.input_shape):
            raise ShapeError(f"input shape {x.shape[1:]} does not match graph input {tuple(self.input_shape)}")
        last_use = {}
        for i, layer in enumerate(self.layers):
            for j in layer.inputs:
                last_use[j] = i
        outputs: dict[int, Tensor] = {-1: x}
        out = x
        for i, layer in enumerate(self.layers):
            args = [outputs[j] for j in layer.inputs]
            out = _apply(self, layer, args)
            outputs[i] = out
            for j in layer.inputs:
                if last_use.get(j) == i:
                    del outputs[j]
        return out


def _apply(graph: LayerGraph, layer: LayerSpec, args: list[Tensor]) -> Tensor:
    p = graph.params
    kind = layer.kind
    if kind == "conv":
        out = ops.conv2d(args[0], p[f"{layer.name}.weight"], p[f"{layer.name}.bias"], layer.stride, layer.padding)
    elif kind == "maxpool":
        out = ops.max_pool2d(args[0], layer.kernel, layer.stride, layer.padding)
    elif kind == "avgpool":
        if layer.kernel == 0:
            out = ops.global_avg_pool(args[0])
        else:
            out = ops.avg_pool2d(args[0], layer.kernel, layer.stride, layer.padding)
    elif kind == "flatten":
        out = ops.flatten(args[0])
    elif kind == "dense":
        out = ops.dense(args[0], p[f"{layer.name}.weight"], p[f"{layer.name}.bias"])
    elif kind == "softmax":
        out = ops.softmax(args[0])
    elif kind == "residual_add":
        out = ops.add(args[0], args[1])
    else:
        raise StructureError(f"unknown layer kind {kind!r} at {layer.name}")
    return ops.relu(out) if layer.relu else out


def _init_layer(graph: LayerGraph, layer: LayerSpec, rng: np.random.Generator) -> None:
    # Uniform fan-in scaling: He bound for convs (followed by relu), LeCun bound for dense.
    if layer.kind not in ("conv", "dense"):
        return
    shapes = layer.param_shapes()
    wname, bname = f"{layer.name}.weight", f"{layer.name}.bias"
    wshape = shapes[wname]
    fan_in = int(np.prod(wshape[1:]))
    gain = 2.0 if layer.kind == "conv" else 1.0
    bound = np.sqrt(3.0 * gain / fan_in)
    w = rng.uniform(-bound, bound, size=wshape).astype(graph.dtype)
    graph.params[wname] = Tensor(w, requires_grad=True, name=wname)
    graph.params[bname] = Tensor(np.zeros(shapes[bname], dtype=graph.dtype), requires_grad=True, name=bname)


class _Builder:
    def __init__(self, in_channels: int):
        self.layers: list[LayerSpec] = []
        self.channels = in_channels

    @property
    def last(self) -> int:
        return len(self.layers) - 1

    def add(self, spec: LayerSpec) -> int:
        self.layers.append(spec)
        return self.last

    def conv(self, name, group, src, filters, kernel, stride=1, padding=0, relu=True, shortcut=False, in_channels=None):
        cin = self.channels if in_channels is None else in_channels
        idx = self.add(LayerSpec(name, "conv", group, (src,), cin, filters, kernel, stride, padding, relu, shortcut))
        if not shortcut:
            self.channels = filters
        return idx

    def bottleneck(self, prefix, group, mid, out, stride):
        src = self.last
        cin = self.channels
        self.conv(f"{prefix}.conv1", group, src, mid, 1)
        self.conv(f"{prefix}.conv2", group, self.last, mid, 3, stride=stride, padding=1)
        main = self.conv(f"{prefix}.conv3", group, self.last, out, 1, relu=False)
        if stride != 1 or cin != out:
            short = self.conv(f"{prefix}.proj", group, src, out, 1, stride=stride, shortcut=True, in_channels=cin)
        else:
            short = src
        self.add(LayerSpec(f"{prefix}.add", "residual_add", group, (main, short), relu=True))

    def stages(self, plan, first_stride=1):
        for s, (mid, out, repeats) in enumerate(plan, start=1):
            for b in range(1, repeats + 1):
                stride = (first_stride if s == 1 else 2) if b == 1 else 1
                self.bottleneck(f"stage{s}.block{b}", f"stage{s}", mid, out, stride)

    def head(self, num_classes):
        self.add(LayerSpec("head.avgpool", "avgpool", "head", (self.last,)))
        self.add(LayerSpec("head.dense", "dense", "head", (self.last,), self.channels, num_classes))
        self.add(LayerSpec("head.softmax", "softmax", "head", (self.last,)))


def build_resnet50(num_classes: int = 1000, seed: int = 0, init: bool = True, dtype=np.float32) -> LayerGraph:
    """ResNet50 for 3x224x224 input.

    Stem 7x7/64 stride 2, 3x3 max pool stride 2, bottleneck stages of
    (64,64,256)x3, (128,128,512)x4, (256,256,1024)x6, (512,512,2048)x3,
    global average pool, dense, softmax. Pass ``init=False`` to skip
    allocating the ~25M parameters when only the structure is needed.
    """
    _check_classes(num_classes)
    b = _Builder(3)
    b.conv("stem.conv", "stem", -1, 64, 7, stride=2, padding=3)
    b.add(LayerSpec("stem.maxpool", "maxpool", "stem", (b.last,), kernel=3, stride=2, padding=1))
    b.stages(RESNET50_STAGES)
    b.head(num_classes)
    graph = LayerGraph(b.layers, (3, 224, 224), arch="resnet50", dtype=dtype)
    return graph.initialize(seed) if init else graph


def build_micro_resnet(num_classes: int, input_size: int = 32, seed: int = 0, init: bool = True, dtype=np.float32) -> LayerGraph:
    """Desk-scale variant: 3x3/8 stem, stages (8,8,32)x2 and (16,16,64)x2, same head."""
    _check_classes(num_classes)
    if input_size < 16:
        raise ShapeError(f"micro ResNet needs input_size >= 16, got {input_size}")
    b = _Builder(3)
    b.conv("stem.conv", "stem", -1, 8, 3, stride=1, padding=1)
    b.stages(MICRO_STAGES)
    b.head(num_classes)
    graph = LayerGraph(b.layers, (3, input_size, input_size), arch="micro", dtype=dtype)
    return graph.initialize(seed) if init else graph


def build_graph(arch: str, num_classes: int, input_size: int | None = None, seed: int = 0, init: bool = True) -> LayerGraph:
    if arch == "resnet50":
        return build_resnet50(num_classes, seed=seed, init=init)
    if arch == "micro":
        return build_micro_resnet(num_classes, input_size or 32, seed=seed, init=init)
    raise StructureError(f"unknown architecture {arch!r}")


def _check_classes(num_classes):
    if int(num_classes) < 1:
        raise ShapeError(f"num_classes must be positive, got {num_classes}")


def replace_head(graph: LayerGraph, new_num_classes: int, seed: int = 0) -> LayerGraph:
    """Cut the final dense+softmax, append flatten + new dense + softmax.

    The returned graph shares every retained parameter tensor with ``graph``
    (same objects) and marks them non-trainable. A flatten left by an earlier
    surgery is dropped too, so repeated surgery is equivalent to one.
    """
    _check_classes(new_num_classes)
    layers = graph.layers
    cut = len(layers)
    if cut and layers[-1].kind == "softmax":
        cut -= 1
    if cut == 0 or layers[cut - 1].kind != "dense":
        raise StructureError("replace_head needs a graph ending in dense (+ softmax)")
    cut -= 1
    if graph.base_size is not None and cut > graph.base_size and layers[cut - 1].kind == "flatten":
        cut -= 1
    if graph.base_size is not None:
        cut = min(cut, graph.base_size)

    kept = [copy.copy(layer) for layer in layers[:cut]]
    tail = kept[-1].name if kept else None
    features = _feature_width(graph, cut)
    src = cut - 1 if tail is not None else -1
    new_layers = kept + [
        LayerSpec("head.flatten", "flatten", "head", (src,)),
        LayerSpec("head.dense", "dense", "head", (cut,), features, new_num_classes),
        LayerSpec("head.softmax", "softmax", "head", (cut + 1,)),
    ]
    out = LayerGraph(new_layers, graph.input_shape, base_size=cut, arch=graph.arch, dtype=graph.dtype)
    if graph.params:
        for layer in kept:
            for name in layer.param_shapes():
                tensor = graph.params[name]
                tensor.requires_grad = False
                out.params[name] = tensor
        rng = np.random.default_rng([seed, new_num_classes])
        _init_layer(out, new_layers[cut + 1], rng)
    return out


def _feature_width(graph: LayerGraph, cut: int) -> int:
    shapes = infer_shapes(graph, (1,) + tuple(graph.input_shape))
    if cut == 0:
        return int(np.prod(graph.input_shape))
    return int(np.prod(shapes[cut - 1].shape[1:]))


@dataclass
class ShapeRow:
    index: int
    name: str
    kind: str
    hyper: str
    shape: tuple[int, ...]
    counted: bool


def infer_shapes(graph: LayerGraph, input_shape) -> list[ShapeRow]:
    """Propagate an ``N x C x H x W`` (or ``N x D``) shape through the graph.

    Raises StructureError naming the first layer whose output would have a
    non-positive dimension, or whose inputs disagree with its declaration.
    """
    input_shape = tuple(int(d) for d in input_shape)
    if not input_shape or any(d <= 0 for d in input_shape):
        raise StructureError(f"input shape must be positive, got {input_shape}")
    shapes: dict[int, tuple[int, ...]] = {-1: input_shape}
    rows = []
    for i, layer in enumerate(graph.layers):
        ins = [shapes[j] for j in layer.inputs]
        shape = _layer_shape(i, layer, ins)
        if any(d <= 0 for d in shape):
            raise StructureError(f"layer {i} ({layer.name}) produces non-positive shape {shape}")
        shapes[i] = shape
        rows.append(ShapeRow(i, layer.name, layer.kind, layer.describe(), shape, layer.counted))
    return rows


def _layer_shape(i, layer, ins):
    where = f"layer {i} ({layer.name})"
    x = ins[0]
    kind = layer.kind
    if kind in ("conv", "maxpool") or (kind == "avgpool" and layer.kernel):
        if len(x) != 4:
            raise StructureError(f"{where} expects a 4-D input, got {x}")
        n, c, h, w = x
        if kind == "conv" and c != layer.in_channels:
            raise StructureError(f"{where} expects {layer.in_channels} channels, got {c}")
        k = layer.kernel
        ho = ops.conv_output_size(h, k, layer.stride, layer.padding)
        wo = ops.conv_output_size(w, k, layer.stride, layer.padding)
        if h + 2 * layer.padding < k or w + 2 * layer.padding < k:
            raise StructureError(f"{where}: window {k} exceeds padded input {h}x{w}")
        return (n, layer.filters if kind == "conv" else c, ho, wo)
    if kind == "avgpool":
        if len(x) != 4:
            raise StructureError(f"{where} expects a 4-D input, got {x}")
        return x[:2]
    if kind == "flatten":
        return (x[0], int(np.prod(x[1:])))
    if kind == "dense":
        if len(x) != 2 or x[1] != layer.in_channels:
            raise StructureError(f"{where} expects input (N, {layer.in_channels}), got {x}")
        return (x[0], layer.filters)
    if kind == "softmax":
        return x
    if kind == "residual_add":
        if len(ins) != 2 or ins[0] != ins[1]:
            raise StructureError(f"{where} joins mismatched shapes {ins}")
        return x
    raise StructureError(f"{where} has unknown kind {kind!r}")


@dataclass
class LayerCount:
    stem: int = 0
    stage1: int = 0
    stage2: int = 0
    stage3: int = 0
    stage4: int = 0
    head: int = 0

    @property
    def total(self) -> int:
        return self.stem + self.stage1 + self.stage2 + self.stage3 + self.stage4 + self.head

    def as_dict(self) -> dict[str, int]:
        d = {g: getattr(self, g) for g in GROUPS}
        d["total"] = self.total
        return d

    def breakdown(self) -> str:
        parts = [str(getattr(self, g)) for g in GROUPS if getattr(self, g)]
        return f"{'+'.join(parts) or '0'}={self.total}"


def count_layers(graph: LayerGraph) -> LayerCount:
    counts = LayerCount()
    for layer in graph.layers:
        if layer.counted:
            setattr(counts, layer.group, getattr(counts, layer.group) + 1)
    return counts
