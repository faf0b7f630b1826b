"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active
(``with Tape() as tape:``), every operation that touches a
:class:`Parameter` or a value already recorded on the tape is appended to
it, and ``tape.backward(loss)`` replays the record in reverse.

Broadcasting is deliberately narrow: operands must have identical shapes,
or one operand is a row/column vector matched against a matrix
(``(n,)`` or ``(1, n)`` against ``(m, n)``, ``(m, 1)`` against ``(m, n)``).
Python scalars are treated as constants and combine with anything.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NonFiniteError",
    "Tensor",
    "Parameter",
    "Tape",
    "Gradients",
    "GradcheckReport",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "softmax",
    "elementwise",
    "reduce_sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "lstm_scan",
    "backward",
    "gradcheck",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity entered a computation."""


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "active_tape", default=None
)


class Tensor:
    """Row-major float64 array. Treated as an immutable value."""

    __slots__ = ("data",)
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape}, data={self.data!r})"

    def __len__(self) -> int:
        return self.data.shape[0]

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __neg__ = lambda self: neg(self)

    def __getitem__(self, index) -> "Tensor":
        return _getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def sum(self, axis=None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)


class Parameter(Tensor):
    """Trainable leaf tensor. Owns a private, writable copy of its data."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64, copy=True))
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _scalar_error(t: Tensor):
    raise DimensionError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Gradients:
    """Mapping from tensors to accumulated gradients.

    Lookups for tensors that were never reached from the loss return exact
    zeros of the right shape.
    """

    def __init__(self, accumulators: dict[int, np.ndarray]):
        self._acc = accumulators

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        g = self._acc.get(id(tensor))
        return np.zeros_like(tensor.data) if g is None else g

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._acc


class Tape:
    """Ordered record of primitive operations for one backward pass."""

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple, Callable]] = []
        self._tracked: set[int] = set()
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.ops)

    def _is_tracked(self, x) -> bool:
        return isinstance(x, Parameter) or (isinstance(x, Tensor) and id(x) in self._tracked)

    def _push(self, out: Tensor, inputs: tuple, back: Callable) -> None:
        self.ops.append((out, inputs, back))
        self._tracked.add(id(out))

    def backward(self, loss: Tensor) -> Gradients:
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        acc: dict[int, np.ndarray] = {}
        if not self._is_tracked(loss):
            return Gradients(acc)
        acc[id(loss)] = np.ones_like(loss.data)
        is_tracked = self._is_tracked
        for out, inputs, back in reversed(self.ops):
            g = acc.get(id(out))
            if g is None:
                continue
            if not isinstance(out, Parameter):
                del acc[id(out)]
            bufs = []
            for x in inputs:
                if is_tracked(x):
                    b = acc.get(id(x))
                    if b is None:
                        b = acc[id(x)] = np.zeros_like(x.data)
                    bufs.append(b)
                else:
                    bufs.append(None)
            back(g, bufs)
        return Gradients(acc)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    return tape.backward(loss)


def _recording(*inputs) -> Tape | None:
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return None
    for x in inputs:
        if tape._is_tracked(x):
            return tape
    return None


# -- broadcasting -----------------------------------------------------------


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if len(a) == 2 and len(b) in (1, 2):
        m, n = a
        if b in ((n,), (1, n), (m, 1)):
            return a
    if len(b) == 2 and len(a) in (1, 2):
        m, n = b
        if a in ((n,), (1, n), (m, 1)):
            return b
    raise DimensionError(f"cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 1:
        return g.sum(axis=0)
    if shape[0] == 1 and g.shape[0] != 1:
        return g.sum(axis=0, keepdims=True)
    return g.sum(axis=1, keepdims=True)


def _operands(a, b) -> tuple[Tensor | float, Tensor | float]:
    if not isinstance(a, Tensor) and not np.isscalar(a):
        a = Tensor(a)
    if not isinstance(b, Tensor) and not np.isscalar(b):
        b = Tensor(b)
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _broadcast_shape(a.shape, b.shape)
    return a, b


def _val(x):
    return x.data if isinstance(x, Tensor) else x


# -- binary elementwise ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    out = Tensor(_val(a) + _val(b))
    tape = _recording(a, b)
    if tape is not None:
        def back(g, bufs):
            if bufs[0] is not None:
                bufs[0] += _unbroadcast(g, a.shape)
            if bufs[1] is not None:
                bufs[1] += _unbroadcast(g, b.shape)
        tape._push(out, (a, b), back)
    return out


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    out = Tensor(_val(a) - _val(b))
    tape = _recording(a, b)
    if tape is not None:
        def back(g, bufs):
            if bufs[0] is not None:
                bufs[0] += _unbroadcast(g, a.shape)
            if bufs[1] is not None:
                bufs[1] -= _unbroadcast(g, b.shape)
        tape._push(out, (a, b), back)
    return out


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    av, bv = _val(a), _val(b)
    out = Tensor(av * bv)
    tape = _recording(a, b)
    if tape is not None:
        def back(g, bufs):
            if bufs[0] is not None:
                bufs[0] += _unbroadcast(g * bv, a.shape)
            if bufs[1] is not None:
                bufs[1] += _unbroadcast(g * av, b.shape)
        tape._push(out, (a, b), back)
    return out


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    av, bv = _val(a), _val(b)
    out = Tensor(av / bv)
    tape = _recording(a, b)
    if tape is not None:
        def back(g, bufs):
            if bufs[0] is not None:
                bufs[0] += _unbroadcast(g / bv, a.shape)
            if bufs[1] is not None:
                bufs[1] -= _unbroadcast(g * av / (bv * bv), b.shape)
        tape._push(out, (a, b), back)
    return out


def neg(a) -> Tensor:
    return mul(a, -1.0)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data
    out = Tensor(av @ bv)
    tape = _recording(a, b)
    if tape is not None:
        def back(g, bufs):
            if bufs[0] is not None:
                bufs[0] += g @ bv.T
            if bufs[1] is not None:
                bufs[1] += av.T @ g
        tape._push(out, (a, b), back)
    return out


# -- unary elementwise -------------------------------------------------------


def _unary(a, value: np.ndarray, local_grad: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    out = Tensor(value)
    tape = _recording(a)
    if tape is not None:
        def back(g, bufs):
            bufs[0] += g * local_grad(value)
        tape._push(out, (a,), back)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.tanh(a.data), lambda y: 1.0 - y * y)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, _sigmoid(a.data), lambda y: y * (1.0 - y))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _unary(a, np.where(mask, a.data, 0.0), lambda _: mask)


def exp(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.exp(a.data), lambda y: y)


def log(a, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` the input is clamped below first and the
    clamped entries get zero gradient."""
    a = as_tensor(a)
    x = a.data
    if floor is None:
        if np.any(x <= 0):
            raise NonFiniteError("log of a non-positive value")
        return _unary(a, np.log(x), lambda _: 1.0 / x)
    live = x > floor
    safe = np.where(live, x, floor)
    return _unary(a, np.log(safe), lambda _: np.where(live, 1.0 / safe, 0.0))


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction."""
    a = as_tensor(a)
    x = a.data
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("softmax input contains NaN or infinity")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    s = z / z.sum(axis=axis, keepdims=True)
    out = Tensor(s)
    tape = _recording(a)
    if tape is not None:
        def back(g, bufs):
            bufs[0] += s * (g - (g * s).sum(axis=axis, keepdims=True))
        tape._push(out, (a,), back)
    return out


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "sub": sub,
    "div": div,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": exp,
}


def elementwise(op: str, *operands) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# -- structural ------------------------------------------------------------


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis))
    tape = _recording(a)
    if tape is not None:
        def back(g, bufs):
            bufs[0] += g if axis is None else np.expand_dims(g, axis)
        tape._push(out, (a,), back)
    return out


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis), 1.0 / n)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    tape = _recording(a)
    if tape is not None:
        def back(g, bufs):
            bufs[0] += g.reshape(a.shape)
        tape._push(out, (a,), back)
    return out


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes))
    tape = _recording(a)
    if tape is not None:
        inverse = None if axes is None else np.argsort(axes)
        def back(g, bufs):
            bufs[0] += np.transpose(g, inverse)
        tape._push(out, (a,), back)
    return out


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        raise TypeError("index with integers, slices or integer arrays")
    out = Tensor(a.data[index])
    tape = _recording(a)
    if tape is not None:
        if _is_advanced(index):
            def back(g, bufs):
                np.add.at(bufs[0], index, g)
        else:
            def back(g, bufs):
                bufs[0][index] += g
        tape._push(out, (a,), back)
    return out


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    tape = _recording(*tensors)
    if tape is not None:
        bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
        def back(g, bufs):
            for k, buf in enumerate(bufs):
                if buf is not None:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(bounds[k], bounds[k + 1])
                    buf += g[tuple(sl)]
        tape._push(out, tuple(tensors), back)
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    tape = _recording(*tensors)
    if tape is not None:
        def back(g, bufs):
            for k, buf in enumerate(bufs):
                if buf is not None:
                    buf += np.take(g, k, axis=axis)
        tape._push(out, tuple(tensors), back)
    return out


# -- recurrence --------------------------------------------------------------


def lstm_scan(pre, w_hidden) -> Tensor:
    """One LSTM layer over a whole sequence as a single primitive.

    ``pre`` (T, B, 4K) holds the input projections ``x_t @ W + b`` with gate
    blocks ordered i, f, o, g; ``w_hidden`` is (K, 4K). Returns the hidden
    states (T, B, K), starting from zero hidden and cell state. The adjoint
    is back-propagation through time.
    """
    pre, w_hidden = as_tensor(pre), as_tensor(w_hidden)
    if (
        pre.ndim != 3
        or w_hidden.ndim != 2
        or pre.shape[2] != w_hidden.shape[1]
        or w_hidden.shape[1] != 4 * w_hidden.shape[0]
    ):
        raise DimensionError(f"lstm_scan shape mismatch: pre {pre.shape}, w_hidden {w_hidden.shape}")
    P, U = pre.data, w_hidden.data
    T, B, K4 = P.shape
    K = K4 // 4
    # unit-major layout keeps every gate block contiguous
    Pt = np.ascontiguousarray(P.transpose(0, 2, 1))
    Ut = np.ascontiguousarray(U.T)
    H = np.empty((T, K, B))
    gates = np.empty((T, K4, B))  # activated i, f, o, g
    cells = np.empty((T, K, B))
    tanh_c = np.empty((T, K, B))
    z = np.empty((K4, B))
    h = np.zeros((K, B))
    with np.errstate(over="ignore"):  # exp overflow saturates a gate at 0
        for t in range(T):
            np.matmul(Ut, h, out=z)
            z += Pt[t]
            act = gates[t]
            sig = act[: 3 * K]
            np.negative(z[: 3 * K], out=sig)
            np.exp(sig, out=sig)
            sig += 1.0
            np.reciprocal(sig, out=sig)
            np.tanh(z[3 * K :], out=act[3 * K :])
            c = cells[t]
            np.multiply(act[:K], act[3 * K :], out=c)
            if t:
                c += act[K : 2 * K] * cells[t - 1]
            np.tanh(c, out=tanh_c[t])
            h = H[t]
            np.multiply(act[2 * K : 3 * K], tanh_c[t], out=h)
    out = Tensor(H.transpose(0, 2, 1))
    tape = _recording(pre, w_hidden)
    if tape is not None:
        def back(g_out, bufs):
            i, f, o, g = gates[:, :K], gates[:, K : 2 * K], gates[:, 2 * K : 3 * K], gates[:, 3 * K :]
            # local derivatives that do not depend on the recurrence
            d_i = g * i * (1.0 - i)
            d_f = np.zeros_like(f)
            d_f[1:] = cells[:-1] * f[1:] * (1.0 - f[1:])
            d_o = tanh_c * o * (1.0 - o)
            d_g = i * (1.0 - g * g)
            d_c = o * (1.0 - tanh_c * tanh_c)
            G = np.ascontiguousarray(g_out.transpose(0, 2, 1))
            dz_all = np.empty((T, K4, B))
            dh = np.zeros((K, B))
            dc = np.zeros((K, B))
            tmp = np.empty((K, B))
            for t in range(T - 1, -1, -1):
                dh += G[t]
                if t < T - 1:
                    dc *= f[t + 1]
                np.multiply(dh, d_c[t], out=tmp)
                dc += tmp
                dz = dz_all[t]
                np.multiply(dc, d_i[t], out=dz[:K])
                np.multiply(dc, d_f[t], out=dz[K : 2 * K])
                np.multiply(dh, d_o[t], out=dz[2 * K : 3 * K])
                np.multiply(dc, d_g[t], out=dz[3 * K :])
                np.matmul(U, dz, out=dh)
            if bufs[0] is not None:
                bufs[0] += dz_all.transpose(0, 2, 1)
            if bufs[1] is not None and T > 1:
                bufs[1] += np.matmul(H[:-1], dz_all[1:].transpose(0, 2, 1)).sum(axis=0)
        tape._push(out, (pre, w_hidden), back)
    return out


# -- gradient checking ---------------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    eps: float
    n_checked: int
    worst: tuple[str, tuple] | None = None
    per_parameter: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tol:g} "
            f"coords={self.n_checked} worst={self.worst}"
        )


def relative_error(g_ad: float, g_fd: float) -> float:
    return abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))


def gradcheck(
    f: Callable[[], Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` takes no arguments and reads the parameters it depends on; the
    parameters are perturbed in place and restored afterwards. With
    ``max_coords`` only that many randomly chosen coordinates per parameter
    are checked.
    """
    params = list(params)
    with Tape() as tape:
        loss = f()
    grads = tape.backward(loss)
    rng = np.random.default_rng(seed)
    worst, worst_at, n = 0.0, None, 0
    per_param: dict[str, float] = {}
    for k, p in enumerate(params):
        name = getattr(p, "name", "") or f"param{k}"
        g = grads[p]
        coords = list(np.ndindex(p.shape))
        if max_coords is not None and len(coords) > max_coords:
            picks = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(picks)]
        p_worst = 0.0
        for idx in coords:
            orig = p.data[idx]
            p.data[idx] = orig + eps
            f_plus = f().item()
            p.data[idx] = orig - eps
            f_minus = f().item()
            p.data[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = relative_error(float(g[idx]), fd)
            n += 1
            p_worst = max(p_worst, err)
            if err > worst or worst_at is None:
                worst, worst_at = max(err, worst), (name, idx)
        per_param[name] = p_worst
    return GradcheckReport(worst, tol, eps, n, worst_at, per_param)
