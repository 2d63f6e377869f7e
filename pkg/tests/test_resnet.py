import numpy as np
import pytest

from pantry.errors import ShapeError, StateError, StructureError
from pantry.resnet import (
    LayerGraph,
    LayerSpec,
    RESNET50_STAGES,
    build_micro_resnet,
    build_resnet50,
    count_layers,
    infer_shapes,
    replace_head,
)
from pantry.tensor import Tape, backward, cross_entropy


@pytest.fixture(scope="module")
def r50():
    return build_resnet50(init=False)


def _shape_of(rows, name):
    return next(r.shape for r in rows if r.name == name)


def test_stage_repeats_and_channels():
    assert [s[2] for s in RESNET50_STAGES] == [3, 4, 6, 3]
    assert RESNET50_STAGES[0][:2] == (64, 256)


def test_first_block_channels(r50):
    convs = [l for l in r50.layers if l.name.startswith("stage1.block1.conv")]
    assert [(l.kernel, l.filters) for l in convs] == [(1, 64), (3, 64), (1, 256)]


def test_resnet50_tally(r50):
    c = count_layers(r50)
    assert (c.stem, c.stage1, c.stage2, c.stage3, c.stage4, c.head) == (1, 9, 12, 18, 9, 1)
    assert c.total == 50
    assert c.breakdown() == "1+9+12+18+9+1=50"


@pytest.mark.parametrize("k", [1, 2, 32, 1000])
def test_tally_independent_of_classes(k):
    assert count_layers(build_resnet50(k, init=False)).total == 50


def test_convs_per_stage(r50):
    for s, expected in zip(range(1, 5), (9, 12, 18, 9)):
        convs = [l for l in r50.layers if l.group == f"stage{s}" and l.kind == "conv" and not l.shortcut]
        assert len(convs) == expected


def test_shape_cascade(r50):
    rows = infer_shapes(r50, (1, 3, 224, 224))
    assert _shape_of(rows, "stem.conv") == (1, 64, 112, 112)
    assert _shape_of(rows, "stem.maxpool") == (1, 64, 56, 56)
    assert _shape_of(rows, "stage1.block3.add") == (1, 256, 56, 56)
    assert _shape_of(rows, "stage2.block4.add") == (1, 512, 28, 28)
    assert _shape_of(rows, "stage3.block6.add") == (1, 1024, 14, 14)
    assert _shape_of(rows, "stage4.block3.add") == (1, 2048, 7, 7)
    assert _shape_of(rows, "head.avgpool") == (1, 2048)
    assert rows[-1].shape == (1, 1000)


def test_shape_drift_on_223(r50):
    rows = infer_shapes(r50, (1, 3, 223, 223))
    # floor((223 + 6 - 7)/2) + 1 = 112, then (112 + 2 - 3)//2 + 1 = 56
    assert _shape_of(rows, "stem.conv") == (1, 64, 112, 112)
    assert rows[-1].shape == (1, 1000)


def test_residual_joins_equal_shapes(r50):
    rows = infer_shapes(r50, (2, 3, 224, 224))
    shapes = {r.index: r.shape for r in rows}
    for src, dst in r50.shortcut_edges:
        main = r50.layers[dst].inputs[0]
        assert shapes[src] == shapes[main] == shapes[dst]


def test_head_surgery_resnet50(r50):
    g = replace_head(r50, 32)
    assert infer_shapes(g, (1, 3, 224, 224))[-1].shape == (1, 32)
    assert [l.kind for l in g.layers[-3:]] == ["flatten", "dense", "softmax"]
    assert count_layers(g).total == 50


def test_flatten_only_graph_is_identity():
    g = LayerGraph([LayerSpec("f", "flatten", "head", (-1,))], (5, 1, 1))
    assert infer_shapes(g, (3, 7))[0].shape == (3, 7)


def test_empty_graph_counts_zero():
    assert count_layers(LayerGraph([], (3, 8, 8))).total == 0


def test_infer_shapes_names_bad_layer():
    g = build_micro_resnet(4, init=False)
    with pytest.raises(StructureError, match="stem.conv"):
        infer_shapes(g, (1, 5, 32, 32))
    tiny = LayerGraph([LayerSpec("c", "conv", "stem", (-1,), 1, 1, 5)], (1, 3, 3))
    with pytest.raises(StructureError, match="c"):
        infer_shapes(tiny, (1, 1, 3, 3))


def test_micro_counts_and_shapes():
    g = build_micro_resnet(8, init=False)
    assert count_layers(g).total == 14
    assert count_layers(g).breakdown() == "1+6+6+1=14"
    rows = infer_shapes(g, (1, 3, 32, 32))
    assert all(d > 0 for r in rows for d in r.shape)
    assert rows[-1].shape == (1, 8)
    with pytest.raises(ShapeError):
        build_micro_resnet(8, input_size=15)


def test_micro_forward_runs():
    g = build_micro_resnet(8, seed=3)
    out = g.forward(np.random.default_rng(0).random((2, 3, 32, 32), dtype=np.float32))
    assert out.shape == (2, 8)
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)


def test_uninitialized_forward_raises():
    with pytest.raises(StateError):
        build_micro_resnet(4, init=False).forward(np.zeros((1, 3, 32, 32)))


def test_init_is_seeded():
    a, b = build_micro_resnet(4, seed=7), build_micro_resnet(4, seed=7)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
    c = build_micro_resnet(4, seed=8)
    assert not np.array_equal(a.params["stem.conv.weight"].data, c.params["stem.conv.weight"].data)


@pytest.mark.parametrize("classes", [1, 3, 10])
def test_micro_head_surgery_keeps_base(classes):
    g = build_micro_resnet(8, seed=1)
    before = {n: t.data.copy() for n, t in g.params.items() if not n.startswith("head.dense")}
    h = replace_head(g, classes, seed=5)
    assert h.forward(np.zeros((1, 3, 32, 32), dtype=np.float32)).shape == (1, classes)
    for name, data in before.items():
        assert h.params[name] is g.params[name]
        assert h.params[name].data.tobytes() == data.tobytes()
        assert not h.params[name].requires_grad
    assert h.params["head.dense.weight"].requires_grad
    assert h.params["head.dense.weight"].shape == (classes, 64)


def test_head_surgery_idempotent():
    g = build_micro_resnet(8, seed=1)
    once = replace_head(g, 5)
    twice = replace_head(replace_head(g, 11), 5)
    assert [(l.name, l.kind, l.inputs) for l in once.layers] == [(l.name, l.kind, l.inputs) for l in twice.layers]
    assert once.base_size == twice.base_size
    assert set(once.params) == set(twice.params)


def test_head_surgery_needs_dense_tail():
    g = LayerGraph([LayerSpec("f", "flatten", "head", (-1,))], (5, 1, 1))
    with pytest.raises(StructureError):
        replace_head(g, 3)


def test_frozen_base_gets_no_gradient():
    g = replace_head(build_micro_resnet(8, seed=2), 3)
    x = np.random.default_rng(1).random((2, 3, 32, 32), dtype=np.float32)
    with Tape() as tape:
        loss = cross_entropy(g.forward(x), np.eye(3)[[0, 2]])
    # only the head dense, its softmax and the loss are recorded
    assert [r.op for r in tape.records] == ["dense", "softmax", "cross_entropy"]
    backward(loss)
    assert g.params["head.dense.weight"].grad is not None
    assert g.params["stem.conv.weight"].grad is None


def test_base_param_names_need_surgery():
    with pytest.raises(StructureError):
        build_micro_resnet(4, init=False).base_param_names()
