"""Architecture graphs: declarative specs, validation, and execution.

An ``ArchSpec`` lists named nodes and directed edges.  Node kinds:

* ``input``: a graph entry point; ``out_channels`` declares its width.
* ``conv`` / ``linear``: learned layers (the only parameter carriers),
  with an optional fused activation (relu, sigmoid, or channel softmax).
* ``avgpool`` / ``upsample``: fixed 2x resamplers.
* ``concat``: channel concatenation of its inputs, in edge order.
* ``add``: elementwise sum; all inputs must share a width.

``role`` on learned nodes steers the compressor: "prunable" layers are
reshaped by measured density, "head" layers keep their out-channels
because the channel count is semantic (kernel weights, offsets, masks).

``run_graph`` interprets a spec against a parameter table, computing
only the ancestors of the requested outputs, so one spec can describe
several cooperating subgraphs (e.g. a backbone and a synthesis grid
bridged by non-learned warping outside the graph).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from sgfi import nn
from sgfi.autodiff import Tensor
from sgfi.autodiff import add as t_add
from sgfi.autodiff import relu, sigmoid


class GraphError(ValueError):
    """Structural or shape inconsistency in an ArchSpec."""


NODE_KINDS = ("input", "conv", "linear", "avgpool", "upsample", "concat", "add")
ACTIVATIONS = ("none", "relu", "sigmoid", "softmax")
ROLES = ("prunable", "head", "fixed")


@dataclass
class Node:
    name: str
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    activation: str = "none"
    role: str = "prunable"

    def __post_init__(self):
        if not self.name:
            raise GraphError("node name must be non-empty")
        if self.kind not in NODE_KINDS:
            raise GraphError(f"node {self.name!r}: unknown kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise GraphError(f"node {self.name!r}: unknown activation "
                             f"{self.activation!r}")
        if self.role not in ROLES:
            raise GraphError(f"node {self.name!r}: unknown role {self.role!r}")
        if self.kind in ("conv", "linear"):
            if self.in_channels < 1 or self.out_channels < 1:
                raise GraphError(f"node {self.name!r}: channels must be >= 1, "
                                 f"got {self.in_channels}->{self.out_channels}")
        if self.kind == "conv":
            if self.kernel < 1:
                raise GraphError(f"node {self.name!r}: kernel must be >= 1")
            if self.stride < 1 or self.padding < 0:
                raise GraphError(f"node {self.name!r}: bad stride/padding")
        if self.kind == "input" and self.out_channels < 1:
            raise GraphError(f"input node {self.name!r} must declare "
                             "out_channels >= 1")

    @property
    def learned(self) -> bool:
        return self.kind in ("conv", "linear")


class ArchSpec:
    """An ordered node table plus an ordered edge list."""

    def __init__(self, nodes: list[Node], edges: list[tuple[str, str]]):
        self.nodes: dict[str, Node] = {}
        for node in nodes:
            if node.name in self.nodes:
                raise GraphError(f"duplicate node name {node.name!r}")
            self.nodes[node.name] = node
        self.edges: list[tuple[str, str]] = [(str(a), str(b)) for a, b in edges]
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise GraphError(f"edge {a}->{b} references unknown node")
            if a == b:
                raise GraphError(f"self-loop on {a}")

    def inputs_of(self, name: str) -> list[str]:
        return [a for a, b in self.edges if b == name]

    def consumers_of(self, name: str) -> list[str]:
        return [b for a, b in self.edges if a == name]

    def topo_order(self) -> list[str]:
        indeg = {n: 0 for n in self.nodes}
        for _, b in self.edges:
            indeg[b] += 1
        ready = [n for n in self.nodes if indeg[n] == 0]
        order: list[str] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self.consumers_of(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            cyclic = sorted(set(self.nodes) - set(order))
            raise GraphError(f"cycle through nodes {cyclic}")
        return order

    def channel_flow(self) -> dict[str, int]:
        """Output width of every node, walking edges topologically."""
        flow: dict[str, int] = {}
        for name in self.topo_order():
            node = self.nodes[name]
            srcs = self.inputs_of(name)
            if node.kind == "input":
                if srcs:
                    raise GraphError(f"input node {name!r} has incoming edges")
                flow[name] = node.out_channels
                continue
            if not srcs:
                raise GraphError(f"node {name!r} has no inputs")
            if node.kind in ("conv", "linear"):
                if len(srcs) != 1:
                    raise GraphError(f"node {name!r} needs exactly one input, "
                                     f"has {len(srcs)}")
                got = flow[srcs[0]]
                if got != node.in_channels:
                    raise GraphError(
                        f"edge {srcs[0]}->{name}: producer emits {got} "
                        f"channels, consumer declares {node.in_channels}")
                flow[name] = node.out_channels
            elif node.kind in ("avgpool", "upsample"):
                if len(srcs) != 1:
                    raise GraphError(f"node {name!r} needs exactly one input")
                flow[name] = flow[srcs[0]]
            elif node.kind == "concat":
                if len(srcs) < 2:
                    raise GraphError(f"concat {name!r} needs >= 2 inputs")
                flow[name] = sum(flow[s] for s in srcs)
            elif node.kind == "add":
                if len(srcs) < 2:
                    raise GraphError(f"add {name!r} needs >= 2 inputs")
                widths = {flow[s] for s in srcs}
                if len(widths) != 1:
                    raise GraphError(f"add {name!r}: input widths differ "
                                     f"{sorted(widths)}")
                flow[name] = widths.pop()
        return flow

    def validate(self) -> None:
        for name, node in self.nodes.items():
            if node.kind == "linear" and node.activation == "softmax":
                raise GraphError(f"node {name!r}: softmax activation is for "
                                 "conv nodes")
        self.channel_flow()

    def param_slots(self) -> list[tuple[str, tuple]]:
        """Ordered (tensor name, shape) pairs the parameter table must fill."""
        slots: list[tuple[str, tuple]] = []
        for name, node in self.nodes.items():
            if node.kind == "conv":
                slots.append((f"{name}.weight", (node.out_channels,
                                                 node.in_channels,
                                                 node.kernel, node.kernel)))
                slots.append((f"{name}.bias", (node.out_channels,)))
            elif node.kind == "linear":
                slots.append((f"{name}.weight", (node.out_channels,
                                                 node.in_channels)))
                slots.append((f"{name}.bias", (node.out_channels,)))
        return slots

    def param_count(self) -> int:
        """Learned weight entries, biases excluded."""
        return sum(int(np.prod(shape)) for tname, shape in self.param_slots()
                   if tname.endswith(".weight"))

    def copy(self) -> "ArchSpec":
        return ArchSpec([replace(n) for n in self.nodes.values()],
                        list(self.edges))

    def to_json_dict(self) -> dict:
        return {"nodes": [asdict(n) for n in self.nodes.values()],
                "edges": [[a, b] for a, b in self.edges]}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ArchSpec":
        try:
            nodes = [Node(**n) for n in payload["nodes"]]
            edges = [(a, b) for a, b in payload["edges"]]
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed spec payload: {exc}") from None
        return cls(nodes, edges)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=False)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ArchSpec":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_json_dict(json.load(fh))


def init_params(spec: ArchSpec, seed: int) -> dict[str, Tensor]:
    """He-normal weights and zero biases for every learned node, in spec
    order, from one seeded generator."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, node in spec.nodes.items():
        if node.kind == "conv":
            fan_in = node.in_channels * node.kernel * node.kernel
            w = nn.he_normal(rng, (node.out_channels, node.in_channels,
                                   node.kernel, node.kernel), fan_in)
        elif node.kind == "linear":
            w = nn.he_normal(rng, (node.out_channels, node.in_channels),
                             node.in_channels)
        else:
            continue
        params[f"{name}.weight"] = Tensor(w, requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(node.out_channels),
                                        requires_grad=True)
    return params


def check_params(spec: ArchSpec, params: dict[str, Tensor]) -> None:
    """Every slot filled exactly once with the right shape."""
    slots = dict(spec.param_slots())
    missing = sorted(set(slots) - set(params))
    extra = sorted(set(params) - set(slots))
    if missing or extra:
        raise GraphError(f"parameter table mismatch: missing {missing}, "
                         f"unexpected {extra}")
    for tname, shape in slots.items():
        got = tuple(params[tname].shape)
        if got != shape:
            raise GraphError(f"parameter {tname!r}: shape {got} != spec {shape}")


def _ancestors(spec: ArchSpec, outputs: list[str]) -> set[str]:
    needed: set[str] = set()
    stack = list(outputs)
    while stack:
        n = stack.pop()
        if n in needed:
            continue
        needed.add(n)
        stack.extend(spec.inputs_of(n))
    return needed


def _apply_activation(t: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return relu(t)
    if activation == "sigmoid":
        return sigmoid(t)
    if activation == "softmax":
        return nn.channel_softmax(t)
    return t


def run_graph(spec: ArchSpec, params: dict[str, Tensor],
              inputs: dict[str, Tensor], outputs: list[str]
              ) -> dict[str, Tensor]:
    """Execute the subgraph feeding ``outputs``; returns those tensors.

    ``inputs`` maps input-node names to tensors ([C,H,W] or [N,C,H,W]);
    channel counts are checked against the declarations.
    """
    for name in outputs:
        if name not in spec.nodes:
            raise GraphError(f"unknown output node {name!r}")
    needed = _ancestors(spec, outputs)
    values: dict[str, Tensor] = {}
    for name in spec.topo_order():
        if name not in needed:
            continue
        node = spec.nodes[name]
        if node.kind == "input":
            if name not in inputs:
                raise GraphError(f"missing input tensor for node {name!r}")
            t = inputs[name]
            if t.shape[-3] != node.out_channels:
                raise GraphError(f"input {name!r}: tensor has {t.shape[-3]} "
                                 f"channels, node declares {node.out_channels}")
            values[name] = t
            continue
        srcs = [values[s] for s in spec.inputs_of(name)]
        if node.kind == "conv":
            layer = nn.Conv2dLayer(node.in_channels, node.out_channels,
                                   node.kernel, node.stride, node.padding,
                                   params[f"{name}.weight"],
                                   params[f"{name}.bias"])
            values[name] = _apply_activation(nn.conv2d(srcs[0], layer),
                                             node.activation)
        elif node.kind == "linear":
            layer = nn.LinearLayer(node.in_channels, node.out_channels,
                                   params[f"{name}.weight"],
                                   params[f"{name}.bias"])
            values[name] = _apply_activation(nn.linear(srcs[0], layer),
                                             node.activation)
        elif node.kind == "avgpool":
            values[name] = nn.avgpool2x(srcs[0])
        elif node.kind == "upsample":
            values[name] = nn.upsample2x(srcs[0])
        elif node.kind == "concat":
            acc = srcs[0]
            for s in srcs[1:]:
                acc = nn.concat_channels(acc, s)
            values[name] = acc
        elif node.kind == "add":
            acc = srcs[0]
            for s in srcs[1:]:
                acc = t_add(acc, s)
            values[name] = acc
    return {name: values[name] for name in outputs}
