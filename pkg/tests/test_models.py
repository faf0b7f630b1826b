import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canet import layers as L
from canet import models as M
from canet.data import (
    BODY_NODES,
    body_graph,
    ComponentSpec,
    Registry,
    RegistryMismatchError,
    WindowSet,
    make_windows,
    skeleton_registry,
)
from canet.models import Decisions


def random_windows(rng, registry, n=3, T=6, skeleton=False):
    blocks = {c.name: rng.normal(size=(n, T, c.width)) for c in registry}
    joints = rng.uniform(0, 1, size=(n, T, len(BODY_NODES), 3)) if skeleton else None
    return WindowSet(registry, blocks, rng.integers(0, 2, size=n), [f"w{i}" for i in range(n)], np.arange(n), joints)


REG3 = Registry((ComponentSpec("a", 3, "imu"), ComponentSpec("b", 2, "other"), ComponentSpec("c", 4, "audio-features")))
IMU1 = Registry((ComponentSpec("acc", 3, "imu"),))


def canet(rng, reg=REG3, T=6, **kw):
    return M.init_canet(reg, T, rng, **kw)


def gcn(rng, reg=IMU1, T=6, **kw):
    return M.init_gcn_canet(reg, T, rng, **kw)


# -- forward ---------------------------------------------------------------------------------


def test_canet_output_shapes_and_sums(rng):
    params = canet(rng)
    ws = random_windows(rng, REG3)
    p, attn = M.forward(params, ws)
    assert p.shape == (3, 2)
    np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-12)
    assert attn.temporal.shape == (3, 6, 3) and attn.component.shape == (3, 8, 3)
    np.testing.assert_allclose(attn.temporal.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(attn.component.sum(axis=2), 1.0, atol=1e-12)
    p1, a1 = M.canet_forward(params, ws[1])
    np.testing.assert_allclose(p1.data, p.data[1], atol=1e-14)
    assert a1.temporal.shape == (6, 3)


def test_forward_is_bitwise_repeatable(rng):
    params = canet(rng)
    ws = random_windows(rng, REG3)
    p1, a1 = M.forward(params, ws)
    p2, a2 = M.forward(params, ws)
    assert np.array_equal(p1.data, p2.data)
    assert np.array_equal(a1.temporal, a2.temporal) and np.array_equal(a1.component, a2.component)


def test_zero_model_is_half_half(rng):
    for params in (canet(rng), gcn(rng)):
        M.zero_parameters(params)
        ws = random_windows(rng, params.registry, skeleton=params.kind == "gcn-canet")
        assert np.all(M.forward(params, ws)[0].data == 0.5)


def test_single_component_collapses(rng):
    reg = Registry((ComponentSpec("a", 3, "imu"),))
    params = canet(rng, reg)
    w = random_windows(rng, reg, n=1)[0]
    p, attn = M.forward(params, w)
    x = params.embeddings["a"]
    H = L.lstm_forward(params.lstm, L.linear(w.blocks["a"], x))
    _, theta = L.temporal_attention(H, params.temporal[0])
    expect = L.classifier_head(theta.reshape(-1, 1), params.head.weight, params.head.bias)
    assert np.all(attn.component == 1.0)
    np.testing.assert_allclose(p.data, expect.data, atol=1e-14)


def permuted(params, order):
    """The same CANet with its components listed in ``order``."""
    names = [params.registry.names[i] for i in order]
    clone = M.init_canet(params.registry.subset(names), params.dims.T, 0, params.decisions, **{
        "K": params.dims.K, "E": params.dims.E, "D": params.dims.D})
    src = M.named_parameters(params)
    for name, p in M.named_parameters(clone).items():
        p.data[...] = src[name].data
    K = params.dims.K
    clone.temporal.data[...] = params.temporal.data[order]
    clone.component.w1.data[...] = params.component.w1.data[order]
    clone.component.w2.data[...] = params.component.w2.data[:, order]
    clone.component.b2.data[...] = params.component.b2.data[order]
    blocks = [params.head.weight.data[c * K : (c + 1) * K] for c in order]
    clone.head.weight.data[...] = np.concatenate(blocks)
    return clone


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations([0, 1, 2]))
def test_component_permutation_equivariance(seed, order):
    r = np.random.default_rng(seed)
    params = canet(r)
    ws = random_windows(r, REG3)
    p, attn = M.forward(params, ws)
    q, attn_q = M.forward(permuted(params, list(order)), ws)
    # sums over components reassociate, so equality holds to rounding only
    np.testing.assert_allclose(q.data, p.data, atol=1e-12, rtol=0)
    np.testing.assert_allclose(attn_q.temporal, attn.temporal[:, :, list(order)], atol=1e-12, rtol=0)
    np.testing.assert_allclose(attn_q.component, attn.component[:, :, list(order)], atol=1e-12, rtol=0)


def test_registry_mismatch_errors(rng):
    params = canet(rng)
    other = Registry((ComponentSpec("a", 3, "imu"), ComponentSpec("b", 5, "other"), ComponentSpec("c", 4, "audio-features")))
    with pytest.raises(RegistryMismatchError):
        M.forward(params, random_windows(rng, other))
    with pytest.raises(RegistryMismatchError, match=r"C=3.*C=2"):
        M.check_registry(params, REG3.subset(["a", "b"]))
    with pytest.raises(RegistryMismatchError):
        M.forward(params, random_windows(rng, REG3, T=7))


# -- GCN-CANet ---------------------------------------------------------------------------------


def test_gcn_canet_adds_one_gc_column(rng):
    params = gcn(rng)
    ws = random_windows(rng, IMU1, skeleton=True)
    p, attn = M.forward(params, ws)
    assert attn.components == ["GC", "acc"]
    assert attn.temporal.shape == (3, 6, 2) and attn.component.shape == (3, 8, 2)
    c = M.forward(canet(rng, IMU1), ws)[1]
    assert attn.temporal.shape[2] == c.temporal.shape[2] + 1
    np.testing.assert_allclose(p.data.sum(axis=1), 1, atol=1e-12)


def test_gcn_canet_joints_only(rng):
    params = gcn(rng, Registry(()))
    assert params.lstm is None
    ws = random_windows(rng, Registry(()), skeleton=True)
    p, attn = M.forward(params, ws)
    assert attn.components == ["GC"] and np.all(attn.component == 1.0)


def test_gcn_canet_requires_joints(rng):
    with pytest.raises(RegistryMismatchError):
        M.forward(gcn(rng), random_windows(rng, IMU1))
    with pytest.raises(RegistryMismatchError):
        M.check_registry(gcn(rng), IMU1)
    with pytest.raises(ValueError):
        M.init_gcn_canet(skeleton_registry(), 6)


def test_gcn_canet_graph_override(rng):
    params = gcn(rng)
    ws = random_windows(rng, IMU1, skeleton=True)
    base = M.gcn_canet_forward(params, ws)[0].data
    same = M.gcn_canet_forward(params, ws, body_graph())[0].data
    assert np.array_equal(base, same)
    edgeless = M.gcn_canet_forward(params, ws, np.eye(14))[0].data
    assert not np.allclose(base, edgeless)
    with pytest.raises(RegistryMismatchError):
        M.gcn_canet_forward(params, ws, np.eye(13))


def test_edgeless_graph_is_per_node_linear_relu(rng):
    params = gcn(rng, gcn_layers=1, gcn_hidden=4)
    X = rng.uniform(size=(14, 3))
    out = L.gcn_forward(L.GcnStack(params.gcn.weights, np.eye(14)), X).data
    np.testing.assert_array_equal(out, np.maximum(X @ params.gcn.weights[0].data, 0))


def test_zeroed_gc_head_block_ignores_graph(rng):
    params = gcn(rng)
    K = params.dims.K
    params.head.weight.data[:K] = 0.0
    ws = random_windows(rng, IMU1, skeleton=True)
    p = M.forward(params, ws)[0].data
    ws2 = WindowSet(ws.registry, ws.blocks, ws.labels, ws.segment_ids, ws.starts, rng.uniform(size=ws.joints.shape))
    p2 = M.forward(params, ws2)[0].data
    # GC still shifts component attention weights of the acc column, so compare predictions
    assert p.shape == p2.shape and np.all(np.isfinite(p2))


def test_direct_wiring_records_last_frame(rng):
    params = gcn(rng, decisions=Decisions(gc_wiring="direct"))
    attn = M.forward(params, random_windows(rng, IMU1, skeleton=True))[1]
    assert np.all(attn.temporal[:, -1, 0] == 1.0) and np.all(attn.temporal[:, :-1, 0] == 0.0)


def test_decisions_validated():
    with pytest.raises(ValueError):
        Decisions(softmax_axis="diag")
    with pytest.raises(ValueError):
        Decisions(gc_wiring="sideways")


# -- persistence --------------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["canet", "gcn-canet"])
def test_save_load_is_bit_exact(tmp_path, rng, kind):
    params = canet(rng) if kind == "canet" else gcn(rng, decisions=Decisions(softmax_axis="flat"))
    M.save_model(params, tmp_path / "m.json", meta={"split_seed": 3})
    loaded, meta = M.load_model_with_meta(tmp_path / "m.json")
    assert meta == {"split_seed": 3} and loaded.decisions == params.decisions
    for (n1, a), (n2, b) in zip(M.named_parameters(params).items(), M.named_parameters(loaded).items()):
        assert n1 == n2 and np.array_equal(a.data, b.data)
    M.save_model(loaded, tmp_path / "again.json", meta={"split_seed": 3})
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "again.json").read_bytes()
    doc = json.loads((tmp_path / "m.json").read_text())
    assert {"version", "dims", "registry", "decisions", "tensors"} <= set(doc)
    assert doc["decisions"]["vec_order"] == "column"


def test_load_errors_are_distinct(tmp_path, rng):
    path = tmp_path / "m.json"
    M.save_model(canet(rng), path)
    doc = json.loads(path.read_text())

    def write(d):
        path.write_text(json.dumps(d))

    write({**doc, "version": 99})
    with pytest.raises(M.ModelVersionError):
        M.load_model(path)
    write({**doc, "dims": {**doc["dims"], "C": 5}})
    with pytest.raises(M.ModelDimsError):
        M.load_model(path)
    bad = json.loads(json.dumps(doc))
    bad["tensors"]["head.bias"]["shape"] = [3]
    write(bad)
    with pytest.raises(M.ModelDimsError):
        M.load_model(path)
    path.write_text("{not json")
    with pytest.raises(M.CorruptModelError):
        M.load_model(path)
    bad = json.loads(json.dumps(doc))
    del bad["tensors"]["head.bias"]
    write(bad)
    with pytest.raises(M.CorruptModelError):
        M.load_model(path)


# -- attention export ------------------------------------------------------------------------------


def uniform_record():
    return M.AttentionRecord(["a", "b"], np.full((2, 2), 0.5), np.full((3, 2), 0.5))


def test_csv_export(tmp_path):
    path = M.export_attention(uniform_record(), tmp_path / "t.csv")
    lines = path.read_text().split("\n")
    assert lines[0] == "frame,a,b"
    assert lines[1:3] == ["0,0.5,0.5", "1,0.5,0.5"]
    assert all(len(line.split(",")) == 3 for line in lines[:-1])
    comp = M.export_attention(uniform_record(), tmp_path / "c.csv", which="component").read_text().split("\n")
    assert comp[0] == "unit,a,b" and len(comp) == 5


def test_ppm_export_dimensions(tmp_path, rng):
    params = canet(rng)
    attn = M.forward(params, random_windows(rng, REG3))[1].instance(0)
    raw = M.export_attention(attn, tmp_path / "t.ppm", "ppm").read_bytes()
    assert raw.startswith(b"P5\n3 6\n255\n") and len(raw) == len(b"P5\n3 6\n255\n") + 18
    raw = M.export_attention(attn, tmp_path / "c.ppm", "ppm", "component").read_bytes()
    assert raw.startswith(b"P5\n3 8\n255\n")
    pixels = np.frombuffer(raw[len(b"P5\n3 8\n255\n"):], dtype=np.uint8).reshape(8, 3)
    assert np.all(pixels.max(axis=1) == 255) and np.all(pixels.min(axis=1) == 0)


def test_csv_full_precision(tmp_path, rng):
    params = canet(rng)
    attn = M.forward(params, random_windows(rng, REG3))[1].instance(0)
    rows = (tmp_path / "t.csv")
    M.export_attention(attn, rows)
    body = np.loadtxt(rows, delimiter=",", skiprows=1)[:, 1:]
    assert np.array_equal(body, attn.temporal)


def test_export_rejects_batched_record(tmp_path, rng):
    attn = M.forward(canet(rng), random_windows(rng, REG3))[1]
    with pytest.raises(ValueError):
        M.export_attention(attn, tmp_path / "x.csv")


def test_nineteen_component_export(tmp_path, rng, small_segments):
    reg = skeleton_registry(6)
    assert len(reg) == 19
    params = M.init_canet(reg, 150, rng)
    ws = random_windows(rng, reg, n=1, T=150)
    attn = M.forward(params, ws[0])[1]
    header = M.export_attention(attn, tmp_path / "t.csv").read_text().split("\n")[0]
    assert len(header.split(",")) == 20
