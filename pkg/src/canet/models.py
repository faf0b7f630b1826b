"""CANet and GCN-CANet: assembly, attention capture, persistence, export.

Both models map a batch of frame-aligned windows to class probabilities.
Each component is embedded to a common width, run through the shared LSTM
and pooled by its own temporal attention; the pooled vectors form the
K x C matrix that component attention reweights before the classifier
head. GCN-CANet replaces the 13 joint components by one graph component
("GC") produced by a GCN over the body graph and a dedicated LSTM.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Union

import numpy as np

from . import layers as L
from . import numeric as nm
from .data import (
    BODY_EDGES,
    BODY_NODES,
    Registry,
    RegistryMismatchError,
    Window,
    WindowSet,
    build_normalized_adjacency,
)
from .numeric import Parameter, Tensor

FORMAT_VERSION = 1
GC_NAME = "GC"
GC_WIRINGS = ("temporal-attention", "direct")
READOUTS = ("mean",)


class ModelFileError(Exception):
    """Base class for model-file problems."""


class ModelVersionError(ModelFileError):
    pass


class ModelDimsError(ModelFileError):
    pass


class CorruptModelError(ModelFileError):
    pass


@dataclass(frozen=True)
class ModelDims:
    T: int
    C: int
    K: int = 8
    N: int = 2
    E: int = 8
    D: int = 0  # 0 means "same as C"
    lstm_layers: int = 3
    gcn_hidden: int = 16
    gcn_layers: int = 3
    gcn_features: int = 3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "D" and v < 1:
                raise ValueError(f"model dimension {f.name} must be positive, got {v}")
        if self.D < 0:
            raise ValueError("bottleneck D must be >= 0")

    @property
    def bottleneck(self) -> int:
        return self.D or self.C


@dataclass(frozen=True)
class Decisions:
    """Switches for the choices the architecture leaves open."""

    softmax_axis: str = "component"
    vec_order: str = "column"
    gc_wiring: str = "temporal-attention"
    readout: str = "mean"

    def __post_init__(self):
        if self.softmax_axis not in L.SOFTMAX_AXES:
            raise ValueError(f"softmax_axis must be one of {L.SOFTMAX_AXES}")
        if self.vec_order not in L.VEC_ORDERS:
            raise ValueError(f"vec_order must be one of {L.VEC_ORDERS}")
        if self.gc_wiring not in GC_WIRINGS:
            raise ValueError(f"gc_wiring must be one of {GC_WIRINGS}")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")


@dataclass
class AttentionRecord:
    """Temporal scores (T x C) and component map (K x C), optionally batched."""

    components: list[str]
    temporal: np.ndarray
    component: np.ndarray

    def __len__(self) -> int:
        return self.temporal.shape[0] if self.temporal.ndim == 3 else 1

    def instance(self, i: int) -> "AttentionRecord":
        if self.temporal.ndim == 2:
            return self
        return AttentionRecord(self.components, self.temporal[i], self.component[i])


@dataclass
class CANetParams:
    registry: Registry
    dims: ModelDims
    embeddings: dict[str, L.Linear]
    lstm: L.LstmStack
    temporal: Parameter  # C x K, row c is component c's scoring vector
    component: L.ComponentAttention
    head: L.Linear  # (K*C) x N
    decisions: Decisions = field(default_factory=Decisions)

    kind = "canet"

    @property
    def component_names(self) -> list[str]:
        return self.registry.names

    def parameters(self) -> list[Parameter]:
        ps = [p for name in self.registry.names for p in self.embeddings[name].parameters()]
        ps += self.lstm.parameters()
        ps.append(self.temporal)
        ps += self.component.parameters()
        ps += self.head.parameters()
        return ps


@dataclass
class GCNCANetParams:
    registry: Registry  # non-joint components only
    dims: ModelDims
    embeddings: dict[str, L.Linear]
    lstm: L.LstmStack | None  # shared by non-joint branches; None without any
    gcn: L.GcnStack
    graph_lstm: L.LstmStack
    temporal: Parameter  # C x K, row 0 belongs to GC
    component: L.ComponentAttention
    head: L.Linear
    decisions: Decisions = field(default_factory=Decisions)

    kind = "gcn-canet"

    @property
    def component_names(self) -> list[str]:
        return [GC_NAME] + self.registry.names

    def parameters(self) -> list[Parameter]:
        ps = [p for name in self.registry.names for p in self.embeddings[name].parameters()]
        if self.lstm is not None:
            ps += self.lstm.parameters()
        ps += self.gcn.parameters()
        ps += self.graph_lstm.parameters()
        ps.append(self.temporal)
        ps += self.component.parameters()
        ps += self.head.parameters()
        return ps


ModelParams = Union[CANetParams, GCNCANetParams]


# -- construction -------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _branches(rng, registry: Registry, dims: ModelDims):
    embeddings = {c.name: L.Linear.init(rng, c.width, dims.E, f"embed.{c.name}") for c in registry}
    lstm = None
    if len(registry):
        lstm = L.LstmStack.init(rng, dims.E, dims.K, dims.lstm_layers, shared=True, name="lstm")
    return embeddings, lstm


def _fusion(rng, dims: ModelDims):
    temporal = L.uniform_init(rng, (dims.C, dims.K), dims.K, "temporal.w")
    component = L.ComponentAttention.init(rng, dims.C, dims.bottleneck, "component")
    head = L.Linear.init(rng, dims.K * dims.C, dims.N, "head")
    return temporal, component, head


def init_canet(
    registry: Registry,
    T: int,
    seed=0,
    decisions: Decisions | None = None,
    **dim_overrides,
) -> CANetParams:
    if len(registry) == 0:
        raise ValueError("CANet needs at least one component")
    dims = ModelDims(T=T, C=len(registry), **dim_overrides)
    rng = _rng(seed)
    embeddings, lstm = _branches(rng, registry, dims)
    temporal, component, head = _fusion(rng, dims)
    return CANetParams(registry, dims, embeddings, lstm, temporal, component, head, decisions or Decisions())


def init_gcn_canet(
    registry: Registry,
    T: int,
    seed=0,
    decisions: Decisions | None = None,
    **dim_overrides,
) -> GCNCANetParams:
    """``registry`` lists the non-joint components; joints arrive as a
    T x 14 x 3 block and become the GC component."""
    if any(c.modality == "joints" for c in registry):
        raise ValueError("pass only non-joint components; joints feed the graph branch")
    dims = ModelDims(T=T, C=len(registry) + 1, **dim_overrides)
    rng = _rng(seed)
    embeddings, lstm = _branches(rng, registry, dims)
    a_hat = build_normalized_adjacency(BODY_EDGES, len(BODY_NODES))
    gcn = L.GcnStack.init(rng, a_hat, dims.gcn_features, dims.gcn_hidden, dims.gcn_layers, "gcn")
    graph_lstm = L.LstmStack.init(rng, dims.gcn_hidden, dims.K, dims.lstm_layers, shared=False, name="graph_lstm")
    temporal, component, head = _fusion(rng, dims)
    return GCNCANetParams(
        registry, dims, embeddings, lstm, gcn, graph_lstm, temporal, component, head, decisions or Decisions()
    )


def zero_parameters(params: ModelParams) -> None:
    for p in params.parameters():
        p.data[...] = 0.0


# -- forward ---------------------------------------------------------------------------


def _as_batch(window, params: ModelParams) -> tuple[dict[str, np.ndarray], np.ndarray | None, int, bool]:
    if isinstance(window, Window):
        blocks = {k: v[None] for k, v in window.blocks.items()}
        joints = None if window.joints is None else window.joints[None]
        single = True
    elif isinstance(window, WindowSet):
        blocks, joints, single = window.blocks, window.joints, False
    else:
        raise TypeError(f"expected a Window or WindowSet, got {type(window).__name__}")
    for c in params.registry:
        if c.name not in blocks:
            raise RegistryMismatchError(
                f"model components {params.registry.names} not all present in window components {sorted(blocks)}"
            )
        if blocks[c.name].shape[-1] != c.width:
            raise RegistryMismatchError(
                f"component {c.name!r}: model width {c.width} != window width {blocks[c.name].shape[-1]}"
            )
    if params.kind == "gcn-canet":
        if joints is None:
            raise RegistryMismatchError("GCN-CANet needs a joints block (the window has no skeleton)")
        if joints.shape[2] != params.gcn.a_hat.shape[0]:
            raise RegistryMismatchError(
                f"graph has {params.gcn.a_hat.shape[0]} vertices, window joints have {joints.shape[2]}"
            )
    lengths = {b.shape[1] for b in blocks.values() if b.ndim == 3}
    if joints is not None:
        lengths.add(joints.shape[1])
    if lengths != {params.dims.T}:
        raise RegistryMismatchError(f"window length {sorted(lengths)} != model T={params.dims.T}")
    n = next(iter(blocks.values())).shape[0] if blocks else joints.shape[0]
    return blocks, joints, n, single


def _shared_branches(params: ModelParams, blocks, n: int) -> list[Tensor]:
    """Per-component LSTM outputs, each (n, T, K)."""
    if not len(params.registry):
        return []
    T, E = params.dims.T, params.dims.E
    embedded = []
    for c in params.registry:
        x = blocks[c.name].reshape(n * T, c.width)
        embedded.append(L.linear(x, params.embeddings[c.name]).reshape(n, T, E))
    seq = nm.concat(embedded, axis=0).transpose(1, 0, 2)  # T x (C*n) x E
    H = L.lstm_forward(params.lstm, seq).transpose(1, 0, 2)  # (C*n) x T x K
    return [H[i * n : (i + 1) * n] for i in range(len(params.registry))]


def _graph_branch(params: GCNCANetParams, joints: np.ndarray, a_hat: np.ndarray | None = None) -> Tensor:
    """Joints (n, T, V, F) -> GC hidden states (n, T, K)."""
    n, T, V, F = joints.shape
    gcn = params.gcn if a_hat is None else L.GcnStack(params.gcn.weights, a_hat)
    X = np.ascontiguousarray(joints.transpose(2, 1, 0, 3)).reshape(V, T * n, F)
    G = L.gcn_forward(gcn, X)  # V x (T*n) x hidden
    readout = G.reshape(V, T * n * params.dims.gcn_hidden).mean(axis=0)
    seq = readout.reshape(T, n, params.dims.gcn_hidden)
    return L.lstm_forward(params.graph_lstm, seq).transpose(1, 0, 2)


def _pool(H: Tensor, w: Tensor, wiring: str) -> tuple[Tensor, Tensor]:
    if wiring == "direct":
        n, T, K = H.shape
        onehot = np.zeros((n, T))
        onehot[:, -1] = 1.0
        return nm.Tensor(onehot), H[:, T - 1, :]
    return L.temporal_attention(H, w)


def forward(params: ModelParams, window, a_hat: np.ndarray | None = None) -> tuple[Tensor, AttentionRecord]:
    """Class probabilities and attention for a Window or a WindowSet.

    A single Window gives p of shape (N,) and an unbatched record; a
    WindowSet gives (n, N) and a batched record.
    """
    blocks, joints, n, single = _as_batch(window, params)
    hidden = _shared_branches(params, blocks, n)
    wirings = ["temporal-attention"] * len(hidden)
    if params.kind == "gcn-canet":
        hidden.insert(0, _graph_branch(params, joints, a_hat))
        wirings.insert(0, params.decisions.gc_wiring)
    scores, thetas = [], []
    for c, (H, wiring) in enumerate(zip(hidden, wirings)):
        a, theta = _pool(H, params.temporal[c], wiring)
        scores.append(a)
        thetas.append(theta)
    Theta = nm.stack(thetas, axis=2)  # n x K x C
    Bmap, O = L.component_attention(Theta, params.component, params.decisions.softmax_axis)
    p = L.classifier_head(O, params.head.weight, params.head.bias, params.decisions.vec_order)
    temporal = np.stack([a.data for a in scores], axis=2)
    if not np.all(np.isfinite(p.data)):
        raise nm.NonFiniteError("model output contains NaN or infinity")
    record = AttentionRecord(params.component_names, temporal, Bmap.data)
    if single:
        return p.reshape(params.dims.N), record.instance(0)
    return p, record


def canet_forward(params: CANetParams, window) -> tuple[Tensor, AttentionRecord]:
    if params.kind != "canet":
        raise TypeError("canet_forward needs CANetParams")
    return forward(params, window)


def gcn_canet_forward(params: GCNCANetParams, window, graph=None) -> tuple[Tensor, AttentionRecord]:
    """GCN-CANet forward; ``graph`` (a BodyGraph or an adjacency matrix)
    overrides the body graph the model was built with."""
    if params.kind != "gcn-canet":
        raise TypeError("gcn_canet_forward needs GCNCANetParams")
    a_hat = None
    if graph is not None:
        a_hat = np.asarray(graph.a_hat if hasattr(graph, "a_hat") else graph, dtype=np.float64)
        if a_hat.shape != params.gcn.a_hat.shape:
            raise RegistryMismatchError(
                f"graph has {a_hat.shape[0]} vertices, model expects {params.gcn.a_hat.shape[0]}"
            )
    return forward(params, window, a_hat)


def predict_proba(params: ModelParams, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    if len(windows) == 0:
        return np.zeros((0, params.dims.N))
    windows = project_windows(params, windows)
    out = []
    for s in range(0, len(windows), batch_size):
        p, _ = forward(params, windows.subset(np.arange(s, min(s + batch_size, len(windows)))))
        out.append(p.data)
    return np.concatenate(out, axis=0)


def project_windows(params: ModelParams, windows: WindowSet) -> WindowSet:
    """Restrict a dataset's windows to the model's components."""
    if params.kind == "gcn-canet" and windows.joints is None:
        raise RegistryMismatchError("GCN-CANet needs the joints modality, which the windows lack")
    _check_components(params, windows.registry)
    return windows.project(params.registry)


def _check_components(params: ModelParams, registry: Registry) -> None:
    missing = [c.name for c in params.registry if c.name not in registry]
    wrong = [c.name for c in params.registry if c.name in registry and registry[c.name].width != c.width]
    if missing or wrong:
        raise RegistryMismatchError(
            f"model registry {params.registry.names} (C={params.dims.C}) does not match dataset registry "
            f"{registry.names} (C={len(registry)}): missing {missing}, width mismatch {wrong}"
        )


def check_registry(params: ModelParams, registry: Registry) -> None:
    """Raise RegistryMismatchError unless a dataset with ``registry`` can
    feed the model."""
    _check_components(params, registry)
    if params.kind == "gcn-canet" and not registry.has_skeleton():
        raise RegistryMismatchError(
            f"GCN-CANet needs the joints modality (13 keypoints); dataset components are {registry.names}"
        )


# -- persistence ------------------------------------------------------------------------


def named_parameters(params: ModelParams) -> dict[str, Parameter]:
    return {p.name: p for p in params.parameters()}


def model_to_json(params: ModelParams, meta: dict | None = None) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "kind": params.kind,
        "dims": asdict(params.dims),
        "registry": params.registry.to_json(),
        "decisions": {**asdict(params.decisions), "float_layout": "row-major"},
        "tensors": {name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()} for name, p in named_parameters(params).items()},
    }
    if params.kind == "gcn-canet":
        doc["graph"] = {"nodes": list(BODY_NODES), "edges": [list(e) for e in BODY_EDGES]}
    if meta:
        doc["meta"] = meta
    return doc


def save_model(params: ModelParams, path: str | Path, meta: dict | None = None) -> None:
    """Write a versioned JSON model file. Floats use shortest round-trip
    decimals, so a load restores every parameter bit for bit."""
    Path(path).write_text(json.dumps(model_to_json(params, meta), indent=1) + "\n")


def load_model(path: str | Path) -> ModelParams:
    params, _ = load_model_with_meta(path)
    return params


def load_model_with_meta(path: str | Path) -> tuple[ModelParams, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelError(f"{path}: unreadable model file ({exc})") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CorruptModelError(f"{path}: missing format version")
    if doc["version"] != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {doc['version']}, this build reads {FORMAT_VERSION}")
    try:
        registry = Registry.from_json(doc["registry"])
        dims = ModelDims(**doc["dims"])
        dec = {k: v for k, v in doc["decisions"].items() if k != "float_layout"}
        decisions = Decisions(**dec)
        kind = doc["kind"]
        tensors = doc["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"{path}: malformed header ({exc})") from exc
    overrides = {f.name: getattr(dims, f.name) for f in fields(dims) if f.name not in ("T", "C")}
    if kind == "canet":
        expect_c = len(registry)
        build = init_canet
    elif kind == "gcn-canet":
        expect_c = len(registry) + 1
        build = init_gcn_canet
    else:
        raise CorruptModelError(f"{path}: unknown model kind {kind!r}")
    if dims.C != expect_c:
        raise ModelDimsError(f"{path}: dims.C={dims.C} but registry implies C={expect_c}")
    params = build(registry, dims.T, 0, decisions, **overrides)
    named = named_parameters(params)
    if set(named) != set(tensors):
        raise CorruptModelError(
            f"{path}: tensor names differ from the architecture "
            f"(missing {sorted(set(named) - set(tensors))}, unexpected {sorted(set(tensors) - set(named))})"
        )
    for name, p in named.items():
        entry = tensors[name]
        try:
            shape = tuple(int(s) for s in entry["shape"])
            data = np.asarray(entry["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptModelError(f"{path}: tensor {name} is malformed ({exc})") from exc
        if shape != p.shape:
            raise ModelDimsError(f"{path}: tensor {name} has shape {shape}, dims imply {p.shape}")
        if data.size != int(np.prod(shape)):
            raise CorruptModelError(f"{path}: tensor {name} holds {data.size} values for shape {shape}")
        p.data[...] = data.reshape(shape)
    return params, doc.get("meta", {})


# -- attention export -------------------------------------------------------------------------


def export_attention(attn: AttentionRecord, path: str | Path, format: str = "csv", which: str = "temporal") -> Path:
    """Write one attention map as CSV or binary PGM-style PPM (P5).

    CSV: header ``frame`` (or ``unit``) followed by component names, one row
    per frame (temporal) or hidden unit (component map). PPM: one pixel per
    cell, width C, height T or K, each row min-max scaled to [0, 255].
    """
    if attn.temporal.ndim != 2:
        raise ValueError("export a single instance (use record.instance(i))")
    if which == "temporal":
        grid, index = attn.temporal, "frame"
    elif which == "component":
        grid, index = attn.component, "unit"
    else:
        raise ValueError(f"which must be 'temporal' or 'component', got {which!r}")
    path = Path(path)
    if format == "csv":
        lines = [",".join([index] + list(attn.components))]
        for r, row in enumerate(grid.tolist()):
            lines.append(",".join([str(r)] + [repr(v) for v in row]))
        path.write_text("\n".join(lines) + "\n")
    elif format == "ppm":
        lo = grid.min(axis=1, keepdims=True)
        span = grid.max(axis=1, keepdims=True) - lo
        scaled = np.where(span > 0, (grid - lo) / np.where(span > 0, span, 1.0), 0.0)
        pixels = np.round(scaled * 255.0).astype(np.uint8)
        h, w = pixels.shape
        path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
    else:
        raise ValueError(f"format must be 'csv' or 'ppm', got {format!r}")
    return path
