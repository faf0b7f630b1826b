"""Finite-difference gradient checks for every layer and both models.

Each case builds small random inputs from a seed and returns a scalar
loss closure plus the parameters to perturb. ``run_suite`` checks every
case for every seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import layers as L
from . import numeric as nm
from .data import BODY_EDGES, BODY_NODES, ComponentSpec, Registry, WindowSet, build_normalized_adjacency
from .models import Decisions, forward, init_canet, init_gcn_canet
from .numeric import GradcheckReport, Parameter, Tensor

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Parameter]]]


def _param(rng, shape, name, scale=0.5) -> Parameter:
    return Parameter(rng.normal(0.0, scale, size=shape), name=name)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """Random fixed linear functional, so every output entry matters."""
    r = rng.normal(size=out.shape)
    return lambda y: (y * r).sum()


def _linear(rng):
    x = _param(rng, (4, 3), "x")
    layer = L.Linear(_param(rng, (3, 5), "w"), _param(rng, (5,), "b"))
    proj = _project(L.linear(x, layer), rng)
    return (lambda: proj(L.linear(x, layer))), [x, layer.weight, layer.bias]


def _lstm(rng):
    stack = L.LstmStack.init(rng, 3, 4, 3)
    x = _param(rng, (5, 2, 3), "x")
    proj = _project(L.lstm_forward(stack, x), rng)
    return (lambda: proj(L.lstm_forward(stack, x))), [x] + stack.parameters()


def _temporal(rng):
    H = _param(rng, (2, 6, 4), "H")
    w = _param(rng, (4,), "w")
    pa = _project(L.temporal_attention(H, w)[0], rng)
    pt = _project(L.temporal_attention(H, w)[1], rng)

    def f():
        a, theta = L.temporal_attention(H, w)
        return pa(a) + pt(theta)

    return f, [H, w]


def _component(axis: str) -> Case:
    def case(rng):
        Theta = _param(rng, (2, 4, 3), "Theta")
        ca = L.ComponentAttention.init(rng, 3, 2)
        po = _project(L.component_attention(Theta, ca, axis)[1], rng)
        return (lambda: po(L.component_attention(Theta, ca, axis)[1])), [Theta] + ca.parameters()

    return case


def _gcn(rng):
    a_hat = build_normalized_adjacency(BODY_EDGES, len(BODY_NODES))
    X = _param(rng, (len(BODY_NODES), 2, 3), "X")
    W = _param(rng, (3, 5), "W")
    proj = _project(L.gcn_layer(X, W, a_hat), rng)
    return (lambda: proj(L.gcn_layer(X, W, a_hat))), [X, W]


def _head(order: str) -> Case:
    def case(rng):
        O = _param(rng, (3, 4, 2), "O")
        w3, b3 = _param(rng, (8, 2), "w3"), _param(rng, (2,), "b3")
        proj = _project(L.classifier_head(O, w3, b3, order), rng)
        return (lambda: proj(L.classifier_head(O, w3, b3, order))), [O, w3, b3]

    return case


def _cross_entropy(rng):
    logits = _param(rng, (4, 3), "logits")
    labels = rng.integers(0, 3, size=4)
    return (lambda: L.cross_entropy(nm.softmax(logits, axis=1), labels)), [logits]


def _windows(rng, registry: Registry, n: int, T: int, skeleton: bool) -> WindowSet:
    blocks = {c.name: rng.normal(size=(n, T, c.width)) for c in registry}
    joints = rng.uniform(0.0, 1.0, size=(n, T, len(BODY_NODES), 3)) if skeleton else None
    return WindowSet(registry, blocks, rng.integers(0, 2, size=n), [f"w{i}" for i in range(n)], np.zeros(n, dtype=np.int64), joints)


_SMALL = {"K": 4, "E": 3, "lstm_layers": 2, "gcn_hidden": 4, "gcn_layers": 2}


def _canet(decisions: Decisions) -> Case:
    def case(rng):
        reg = Registry(tuple(ComponentSpec(f"c{i}", w, "imu") for i, w in enumerate((3, 2, 3))))
        params = init_canet(reg, 5, rng, decisions, **_SMALL)
        ws = _windows(rng, reg, 2, 5, skeleton=False)
        return (lambda: L.cross_entropy(forward(params, ws)[0], ws.labels)), params.parameters()

    return case


def _gcn_canet(decisions: Decisions) -> Case:
    def case(rng):
        reg = Registry((ComponentSpec("acc", 3, "imu"),))
        params = init_gcn_canet(reg, 4, rng, decisions, **_SMALL)
        ws = _windows(rng, reg, 2, 4, skeleton=True)
        return (lambda: L.cross_entropy(forward(params, ws)[0], ws.labels)), params.parameters()

    return case


CASES: dict[str, Case] = {
    "linear": _linear,
    "lstm-stack": _lstm,
    "temporal-attention": _temporal,
    "component-attention": _component("component"),
    "component-attention-hidden": _component("hidden"),
    "component-attention-flat": _component("flat"),
    "gcn-layer": _gcn,
    "head-column": _head("column"),
    "head-row": _head("row"),
    "cross-entropy": _cross_entropy,
    "canet": _canet(Decisions()),
    "canet-row-flat": _canet(Decisions(softmax_axis="flat", vec_order="row")),
    "gcn-canet": _gcn_canet(Decisions()),
    "gcn-canet-direct": _gcn_canet(Decisions(gc_wiring="direct")),
}


@dataclass
class SuiteResult:
    case: str
    seed: int
    report: GradcheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def run_case(name: str, seed: int, tol: float = 1e-4, eps: float = 1e-6) -> SuiteResult:
    rng = np.random.default_rng([seed, list(CASES).index(name)])
    f, params = CASES[name](rng)
    return SuiteResult(name, seed, nm.gradcheck(f, params, eps=eps, tol=tol, seed=seed))


def run_suite(seeds: Iterable[int] = range(5), tol: float = 1e-4, names: Iterable[str] | None = None) -> list[SuiteResult]:
    return [run_case(name, s, tol) for s in seeds for name in (names or CASES)]
