"""Density profiling and architecture reconstruction.

After sparsified training, each prunable layer l with weight tensor of
K_l entries and z_l exact zeros gets a density ratio d_l = 1 - z_l/K_l.
The layer is then reshaped to carry roughly d_l of its original
parameter count by scaling both channel counts by sqrt(d_l), rounded up:

    C_in' = ceil(sqrt(d_l) * C_in),  C_out' = ceil(sqrt(d_l) * C_out)

(for linear layers the same rule on feature counts), floored at 1.

Provisional counts disagree wherever two layers meet, so a second pass
unifies them: every chain of equal-width constraints (producer out =
consumer in, chased through resamplers; all ports of an ``add``) forms
a class whose width becomes the minimum ("-min" strategy) or maximum
("-max") of the provisional values in it.  Widths pinned by the data
(graph inputs) or by semantics (head layers' out-channels) dominate
their class; two different pinned widths in one class is an error.
Concat consumers then take the sum of their producers' unified widths.

The ceiling is computed in exact integer arithmetic (k is the smallest
integer with k*k*K >= nnz*C*C), so boundary cases like d = 1 reproduce
the original channel count without float drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from sgfi.arch import ArchSpec, GraphError, Node, init_params
from sgfi.autodiff import Tensor


@dataclass
class LayerDensity:
    """Zero bookkeeping for one prunable layer (weights only, no bias)."""

    layer: str
    total: int
    zeros: int

    @property
    def sparsity(self) -> float:
        return self.zeros / self.total

    @property
    def density(self) -> float:
        return 1.0 - self.zeros / self.total

    def to_json_dict(self) -> dict:
        return {"layer": self.layer, "K": self.total, "zeros": self.zeros,
                "sparsity": self.sparsity, "density": self.density}


@dataclass
class DensityProfile:
    layers: list[LayerDensity]

    @property
    def global_density(self) -> float:
        total = sum(l.total for l in self.layers)
        nnz = sum(l.total - l.zeros for l in self.layers)
        return nnz / total

    def by_layer(self) -> dict[str, LayerDensity]:
        return {l.layer: l for l in self.layers}

    def to_json_dict(self) -> dict:
        return {"layers": [l.to_json_dict() for l in self.layers],
                "global_density": self.global_density}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "DensityProfile":
        try:
            layers = [LayerDensity(e["layer"], int(e["K"]), int(e["zeros"]))
                      for e in payload["layers"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed density profile: {exc}") from None
        return cls(layers)


def profile_density(spec: ArchSpec, params: dict[str, Tensor]) -> DensityProfile:
    """Count exact zeros in every prunable learned layer's weight tensor."""
    layers = []
    for name, node in spec.nodes.items():
        if not node.learned or node.role != "prunable":
            continue
        w = params[f"{name}.weight"].data
        layers.append(LayerDensity(name, int(w.size),
                                   int(w.size - np.count_nonzero(w))))
    if not layers:
        raise ValueError("spec has no prunable learned layers to profile")
    return DensityProfile(layers)


def scaled_count(count: int, nnz: int, total: int) -> int:
    """Smallest k with k*k*total >= nnz*count*count, floored at 1."""
    if count < 1 or total < 1 or not 0 <= nnz <= total:
        raise ValueError(f"bad scaling inputs count={count}, nnz={nnz}, "
                         f"total={total}")
    target = nnz * count * count
    k = math.isqrt(target // total)
    while k * k * total < target:
        k += 1
    return max(k, 1)


def density_as_ratio(density: float) -> tuple[int, int]:
    """Exact rational (nnz, total) for a density given as a float."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {density}")
    frac = Fraction(density)
    return frac.numerator, frac.denominator


def reshape_layer(node: Node, density: float | LayerDensity) -> Node:
    """Provisionally rescale a learned node's widths by sqrt(density)."""
    if not node.learned:
        raise ValueError(f"node {node.name!r} is not a learned layer")
    if isinstance(density, LayerDensity):
        nnz, total = density.total - density.zeros, density.total
    else:
        nnz, total = density_as_ratio(density)
    new_in = scaled_count(node.in_channels, nnz, total)
    new_out = scaled_count(node.out_channels, nnz, total)
    return replace(node, in_channels=new_in, out_channels=new_out)


def reshape_spec(spec: ArchSpec, profile: DensityProfile) -> ArchSpec:
    """Apply ``reshape_layer`` to every prunable layer; head layers keep
    their declared out-channels (the in-channels are fixed later by
    unification)."""
    by_layer = profile.by_layer()
    nodes = []
    for name, node in spec.nodes.items():
        if node.learned and node.role == "prunable":
            if name not in by_layer:
                raise ValueError(f"profile has no entry for layer {name!r}")
            nodes.append(reshape_layer(node, by_layer[name]))
        else:
            nodes.append(replace(node))
    return ArchSpec(nodes, list(spec.edges))


class _Union:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def _chase_source(spec: ArchSpec, name: str) -> str:
    """Follow single-input resampler chains back to a width-bearing node."""
    node = spec.nodes[name]
    while node.kind in ("avgpool", "upsample"):
        srcs = spec.inputs_of(node.name)
        if len(srcs) != 1:
            raise GraphError(f"node {node.name!r} needs exactly one input")
        node = spec.nodes[srcs[0]]
    return node.name


def unify_channels(spec: ArchSpec, strategy: str) -> ArchSpec:
    """Make a provisionally reshaped spec graph-consistent.

    ``strategy`` is "min" or "max".  Returns a new validated spec.
    """
    if strategy not in ("min", "max"):
        raise ValueError(f"strategy must be 'min' or 'max', got {strategy!r}")
    pick = min if strategy == "min" else max

    uf = _Union()
    deferred: list[tuple[str, str]] = []      # (consumer, concat source)
    for name, node in spec.nodes.items():
        if node.kind in ("conv", "linear"):
            src = _chase_source(spec, spec.inputs_of(name)[0]) \
                if spec.inputs_of(name) else None
            if src is None:
                raise GraphError(f"learned node {name!r} has no input")
            skind = spec.nodes[src].kind
            if skind == "concat":
                deferred.append((name, src))
            else:
                uf.union(("in", name), ("out", src))
        elif node.kind == "add":
            for s in spec.inputs_of(name):
                uf.union(("out", name), ("out", _chase_source(spec, s)))
        elif node.kind == "concat":
            for s in spec.inputs_of(name):
                uf.find(("out", _chase_source(spec, s)))

    # collect provisional and pinned widths per class
    provisional: dict = {}
    pinned: dict = {}
    for name, node in spec.nodes.items():
        if node.kind == "input":
            pinned.setdefault(uf.find(("out", name)), []).append(
                (name, node.out_channels))
        elif node.kind in ("conv", "linear"):
            provisional.setdefault(uf.find(("in", name)), []).append(
                node.in_channels)
            key = uf.find(("out", name))
            if node.role in ("head", "fixed"):
                pinned.setdefault(key, []).append((name, node.out_channels))
            else:
                provisional.setdefault(key, []).append(node.out_channels)

    width: dict = {}
    for key in set(provisional) | set(pinned):
        pins = pinned.get(key, [])
        if pins:
            values = {v for _, v in pins}
            if len(values) > 1:
                names = ", ".join(f"{n}={v}" for n, v in pins)
                raise GraphError(f"conflicting pinned widths in one class: "
                                 f"{names}")
            width[key] = values.pop()
        else:
            width[key] = pick(provisional[key])

    # second pass: resolve every node's emitted width topologically,
    # summing at concat nodes, then rewrite the learned layers
    emitted: dict[str, int] = {}
    for name in spec.topo_order():
        node = spec.nodes[name]
        if node.kind == "input":
            emitted[name] = node.out_channels
        elif node.kind in ("conv", "linear"):
            emitted[name] = width[uf.find(("out", name))]
        elif node.kind in ("avgpool", "upsample"):
            emitted[name] = emitted[spec.inputs_of(name)[0]]
        elif node.kind == "concat":
            emitted[name] = sum(emitted[s] for s in spec.inputs_of(name))
        elif node.kind == "add":
            emitted[name] = width[uf.find(("out", name))]

    nodes = []
    for name, node in spec.nodes.items():
        if node.kind in ("conv", "linear"):
            src = _chase_source(spec, spec.inputs_of(name)[0])
            new_in = emitted[src]
            new_out = emitted[name]
            nodes.append(replace(node, in_channels=new_in,
                                 out_channels=new_out))
        else:
            nodes.append(replace(node))
    result = ArchSpec(nodes, list(spec.edges))
    result.validate()
    return result


def rebuild_model(spec: ArchSpec, seed: int) -> dict[str, Tensor]:
    """Fresh parameters for a rewritten spec (He init, zero biases)."""
    spec.validate()
    return init_params(spec, seed)
