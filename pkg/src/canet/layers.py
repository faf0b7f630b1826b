"""Building blocks: linear maps, stacked LSTM, the two attention stages,
the classifier head, graph convolution and cross-entropy.

Every function accepts a single instance or a leading batch axis; the
batched forms are what the models use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import DimensionError, Parameter, Tensor

SOFTMAX_AXES = ("component", "hidden", "flat")
VEC_ORDERS = ("column", "row")


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, name: str) -> Parameter:
    s = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-s, s, size=shape), name=name)


# -- linear --------------------------------------------------------------------


@dataclass
class Linear:
    weight: Parameter  # in x out
    bias: Parameter  # out

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, name: str) -> "Linear":
        return cls(
            uniform_init(rng, (n_in, n_out), n_in, f"{name}.weight"),
            uniform_init(rng, (n_out,), n_in, f"{name}.bias"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def linear(x, layer: Linear) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (n_in,) or (M, n_in)."""
    x = nm.as_tensor(x)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.shape[1] != layer.weight.shape[0]:
        raise DimensionError(f"linear input width {x.shape[1]} != {layer.weight.shape[0]}")
    y = x @ layer.weight + layer.bias
    return y.reshape(-1) if single else y


# -- LSTM ----------------------------------------------------------------------


@dataclass
class LstmLayer:
    w_input: Parameter  # F_in x 4K, gate blocks ordered i, f, o, g
    w_hidden: Parameter  # K x 4K
    bias: Parameter  # 4K


@dataclass
class LstmStack:
    input_size: int
    hidden_size: int
    layers: list[LstmLayer]
    shared: bool = True

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        input_size: int,
        hidden_size: int = 8,
        num_layers: int = 3,
        shared: bool = True,
        name: str = "lstm",
    ) -> "LstmStack":
        layers = []
        k4 = 4 * hidden_size
        for i in range(num_layers):
            f_in = input_size if i == 0 else hidden_size
            layers.append(
                LstmLayer(
                    uniform_init(rng, (f_in, k4), f_in, f"{name}.{i}.w_input"),
                    uniform_init(rng, (hidden_size, k4), hidden_size, f"{name}.{i}.w_hidden"),
                    uniform_init(rng, (k4,), hidden_size, f"{name}.{i}.bias"),
                )
            )
        return cls(input_size, hidden_size, layers, shared)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in (layer.w_input, layer.w_hidden, layer.bias)]


def lstm_forward(stack: LstmStack, x) -> Tensor:
    """Run the stack over a sequence and return every top-layer hidden state.

    ``x`` is (T, E) or time-major batched (T, B, E); the result is (T, K) or
    (T, B, K). Initial hidden and cell states are zero.
    """
    x = nm.as_tensor(x)
    single = x.ndim == 2
    if single:
        x = x.reshape(x.shape[0], 1, x.shape[1])
    T, B, E = x.shape
    if E != stack.input_size:
        raise DimensionError(f"LSTM input width {E} != stack input size {stack.input_size}")
    if T < 1:
        raise DimensionError("LSTM needs at least one time step")
    K = stack.hidden_size
    seq = x
    for layer in stack.layers:
        f_in = seq.shape[2]
        pre = (seq.reshape(T * B, f_in) @ layer.w_input + layer.bias).reshape(T, B, 4 * K)
        seq = nm.lstm_scan(pre, layer.w_hidden)
    return seq.reshape(T, K) if single else seq


# -- attention -------------------------------------------------------------------


def temporal_attention(H, w) -> tuple[Tensor, Tensor]:
    """Score frames with ``H @ w``, softmax over time, pool.

    H: (T, K) or (B, T, K); w: (K,). Returns ``a`` of shape (T,) / (B, T)
    and ``theta = H^T a`` of shape (K,) / (B, K).
    """
    H, w = nm.as_tensor(H), nm.as_tensor(w)
    single = H.ndim == 2
    if single:
        H = H.reshape(1, *H.shape)
    B, T, K = H.shape
    if w.shape != (K,):
        raise DimensionError(f"attention weight shape {w.shape} does not match hidden size {K}")
    flat = H.reshape(B * T, K)
    scores = (flat @ w.reshape(K, 1)).reshape(B, T)
    a = nm.softmax(scores, axis=1)
    theta = (flat * a.reshape(B * T, 1)).reshape(B, T, K).sum(axis=1)
    if single:
        return a.reshape(T), theta.reshape(K)
    return a, theta


@dataclass
class ComponentAttention:
    w1: Parameter  # C x D
    b1: Parameter  # D
    w2: Parameter  # D x C
    b2: Parameter  # C

    @classmethod
    def init(cls, rng, n_components: int, bottleneck: int | None = None, name: str = "component") -> "ComponentAttention":
        C = n_components
        D = bottleneck or C
        return cls(
            uniform_init(rng, (C, D), C, f"{name}.w1"),
            uniform_init(rng, (D,), C, f"{name}.b1"),
            uniform_init(rng, (D, C), D, f"{name}.w2"),
            uniform_init(rng, (C,), D, f"{name}.b2"),
        )

    @property
    def n_components(self) -> int:
        return self.w1.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


def component_attention(Theta, params: ComponentAttention, softmax_axis: str = "component") -> tuple[Tensor, Tensor]:
    """Component attention map ``B`` and weighted output ``O = B * Theta``.

    Theta: (K, C) or (M, K, C). With ``softmax_axis="component"`` each of
    the K rows of B is normalized across components; "hidden" normalizes
    each column, "flat" the whole K x C map.
    """
    Theta = nm.as_tensor(Theta)
    single = Theta.ndim == 2
    if single:
        Theta = Theta.reshape(1, *Theta.shape)
    M, K, C = Theta.shape
    if C != params.n_components:
        raise DimensionError(f"Theta has {C} components, attention expects {params.n_components}")
    rows = Theta.reshape(M * K, C)
    hidden = nm.tanh(rows @ params.w1 + params.b1)
    logits = hidden @ params.w2 + params.b2
    if softmax_axis == "component":
        Bmap = nm.softmax(logits, axis=1).reshape(M, K, C)
    elif softmax_axis == "hidden":
        Bmap = nm.softmax(logits.reshape(M, K, C), axis=1)
    elif softmax_axis == "flat":
        Bmap = nm.softmax(logits.reshape(M, K * C), axis=1).reshape(M, K, C)
    else:
        raise ValueError(f"softmax_axis must be one of {SOFTMAX_AXES}, got {softmax_axis!r}")
    O = Bmap * Theta
    if single:
        return Bmap.reshape(K, C), O.reshape(K, C)
    return Bmap, O


def vec(O, order: str = "column") -> Tensor:
    """Flatten (K, C) or (M, K, C) into rows.

    "column" stacks whole columns (component 1's K values, then component
    2's, ...); "row" is plain row-major flattening.
    """
    O = nm.as_tensor(O)
    single = O.ndim == 2
    if single:
        O = O.reshape(1, *O.shape)
    M, K, C = O.shape
    if order == "column":
        flat = O.transpose(0, 2, 1).reshape(M, C * K)
    elif order == "row":
        flat = O.reshape(M, K * C)
    else:
        raise ValueError(f"vec order must be one of {VEC_ORDERS}, got {order!r}")
    return flat.reshape(C * K) if single else flat


def classifier_head(O, w3, b3, order: str = "column") -> Tensor:
    """Class probabilities ``softmax(vec(O) @ W3 + b3)``."""
    O, w3 = nm.as_tensor(O), nm.as_tensor(w3)
    single = O.ndim == 2
    flat = vec(O, order)
    if single:
        flat = flat.reshape(1, -1)
    if flat.shape[1] != w3.shape[0]:
        raise DimensionError(f"head expects {w3.shape[0]} inputs, vec(O) has {flat.shape[1]}")
    p = nm.softmax(flat @ w3 + b3, axis=1)
    return p.reshape(-1) if single else p


# -- graph convolution --------------------------------------------------------------


@dataclass
class GcnStack:
    weights: list[Parameter]
    a_hat: np.ndarray

    @classmethod
    def init(cls, rng, a_hat: np.ndarray, in_features: int = 3, hidden: int = 16, num_layers: int = 3, name: str = "gcn") -> "GcnStack":
        weights = []
        f_in = in_features
        for i in range(num_layers):
            weights.append(uniform_init(rng, (f_in, hidden), f_in, f"{name}.{i}.weight"))
            f_in = hidden
        return cls(weights, np.asarray(a_hat, dtype=np.float64))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def out_features(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[Parameter]:
        return list(self.weights)


def gcn_layer(X, W, a_hat) -> Tensor:
    """``relu(A_hat @ X @ W)``.

    X is (V, F_in) or node-major batched (V, M, F_in): each of the M slices
    is one graph signal.
    """
    X, W = nm.as_tensor(X), nm.as_tensor(W)
    a_hat = np.asarray(a_hat.data if isinstance(a_hat, Tensor) else a_hat)
    single = X.ndim == 2
    if single:
        X = X.reshape(X.shape[0], 1, X.shape[1])
    V, M, F = X.shape
    if a_hat.shape != (V, V):
        raise DimensionError(f"graph has {a_hat.shape[0]} vertices, signal has {V}")
    if W.shape[0] != F:
        raise DimensionError(f"GCN weight expects {W.shape[0]} features, got {F}")
    F_out = W.shape[1]
    xw = (X.reshape(V * M, F) @ W).reshape(V, M * F_out)
    y = nm.relu(nm.matmul(a_hat, xw)).reshape(V, M, F_out)
    return y.reshape(V, F_out) if single else y


def gcn_forward(stack: GcnStack, X) -> Tensor:
    for W in stack.weights:
        X = gcn_layer(X, W, stack.a_hat)
    return X


# -- loss ----------------------------------------------------------------------------

PROB_FLOOR = 1e-12


def cross_entropy(p, label) -> Tensor:
    """``-log p[label]`` with p clamped below at 1e-12.

    For batched ``p`` (M, N) and integer labels (M,), the mean over the batch.
    """
    p = nm.as_tensor(p)
    N = p.shape[-1]
    labels = np.atleast_1d(np.asarray(label))
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= N):
        raise ValueError(f"label {label!r} out of range for {N} classes")
    if p.ndim == 1:
        return -nm.log(p[int(labels[0])], floor=PROB_FLOOR)
    picked = p[np.arange(p.shape[0]), labels]
    return -nm.log(picked, floor=PROB_FLOOR).mean()
