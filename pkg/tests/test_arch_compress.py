"""Graph specs, interpretation, density profiling, reconstruction."""

import numpy as np
import pytest

from sgfi import autodiff as ad
from sgfi.arch import (ArchSpec, GraphError, Node, check_params, init_params,
                       run_graph)
from sgfi.autodiff import Tensor
from sgfi.compress import (DensityProfile, LayerDensity, profile_density,
                           rebuild_model, reshape_layer, reshape_spec,
                           scaled_count, unify_channels)


def chain_spec(widths=(4, 8, 16, 4)):
    """input -> conv1 -> conv2 -> conv3, 3x3 same-padded."""
    nodes = [Node("in", "input", out_channels=widths[0])]
    edges = []
    prev = "in"
    for i in range(len(widths) - 1):
        name = f"conv{i + 1}"
        nodes.append(Node(name, "conv", in_channels=widths[i],
                          out_channels=widths[i + 1], kernel=3, padding=1,
                          activation="relu"))
        edges.append((prev, name))
        prev = name
    return ArchSpec(nodes, edges)


def unet_like_spec():
    """Two-level encoder/decoder with pool, upsample, concat, and a head."""
    nodes = [
        Node("in", "input", out_channels=6),
        Node("enc0", "conv", in_channels=6, out_channels=8, kernel=3,
             padding=1, activation="relu"),
        Node("pool0", "avgpool"),
        Node("enc1", "conv", in_channels=8, out_channels=16, kernel=3,
             padding=1, activation="relu"),
        Node("up0", "upsample"),
        Node("cat0", "concat"),
        Node("dec0", "conv", in_channels=24, out_channels=8, kernel=3,
             padding=1, activation="relu"),
        Node("head", "conv", in_channels=8, out_channels=9, kernel=3,
             padding=1, activation="softmax", role="head"),
    ]
    edges = [("in", "enc0"), ("enc0", "pool0"), ("pool0", "enc1"),
             ("enc1", "up0"), ("enc0", "cat0"), ("up0", "cat0"),
             ("cat0", "dec0"), ("dec0", "head")]
    return ArchSpec(nodes, edges)


def test_validate_accepts_good_specs():
    chain_spec().validate()
    unet_like_spec().validate()


def test_validate_names_offending_edge():
    spec = chain_spec()
    spec.nodes["conv2"].in_channels = 5
    with pytest.raises(GraphError, match="conv1->conv2"):
        spec.validate()


def test_cycle_and_duplicate_rejected():
    with pytest.raises(GraphError, match="duplicate"):
        ArchSpec([Node("a", "input", out_channels=1),
                  Node("a", "input", out_channels=1)], [])
    spec = ArchSpec([Node("a", "conv", in_channels=1, out_channels=1, kernel=1),
                     Node("b", "conv", in_channels=1, out_channels=1, kernel=1)],
                    [("a", "b"), ("b", "a")])
    with pytest.raises(GraphError, match="cycle"):
        spec.validate()


def test_add_width_mismatch_rejected():
    spec = ArchSpec([
        Node("in", "input", out_channels=2),
        Node("a", "conv", in_channels=2, out_channels=3, kernel=1),
        Node("b", "conv", in_channels=2, out_channels=4, kernel=1),
        Node("s", "add"),
    ], [("in", "a"), ("in", "b"), ("a", "s"), ("b", "s")])
    with pytest.raises(GraphError, match="widths differ"):
        spec.validate()


def test_param_slots_and_checking():
    spec = unet_like_spec()
    params = init_params(spec, seed=1)
    check_params(spec, params)
    assert set(params) == {f"{n}.{s}" for n in ("enc0", "enc1", "dec0", "head")
                           for s in ("weight", "bias")}
    assert params["dec0.weight"].shape == (8, 24, 3, 3)
    assert spec.param_count() == (6 * 8 + 8 * 16 + 24 * 8 + 8 * 9) * 9

    bad = dict(params)
    del bad["enc1.bias"]
    with pytest.raises(GraphError, match="missing"):
        check_params(spec, bad)
    bad = dict(params)
    bad["enc0.weight"] = Tensor(np.zeros((8, 6, 3, 3)))
    bad["rogue.weight"] = Tensor(np.zeros(3))
    with pytest.raises(GraphError, match="unexpected"):
        check_params(spec, bad)


def test_run_graph_unet_shapes_and_grad_flow():
    spec = unet_like_spec()
    params = init_params(spec, seed=2)
    x = Tensor(np.random.default_rng(0).normal(size=(6, 8, 8)))
    out = run_graph(spec, params, {"in": x}, ["head"])["head"]
    assert out.shape == (9, 8, 8)
    assert np.max(np.abs(out.data.sum(axis=0) - 1.0)) < 1e-12  # softmax head
    loss = ad.reduce_sum(ad.mul(out, out))
    grads = ad.backward(loss, leaves=list(params.values()))
    assert all(np.all(np.isfinite(g)) for g in grads.values())


def test_run_graph_json_roundtrip_preserves_behavior(tmp_path):
    spec = unet_like_spec()
    params = init_params(spec, seed=3)
    x = Tensor(np.random.default_rng(1).normal(size=(6, 8, 8)))
    out1 = run_graph(spec, params, {"in": x}, ["head"])["head"].data

    path = tmp_path / "spec.json"
    spec.to_json(path)
    spec2 = ArchSpec.from_json(path)
    assert spec2.to_json_dict() == spec.to_json_dict()
    out2 = run_graph(spec2, params, {"in": x}, ["head"])["head"].data
    assert np.array_equal(out1, out2)


def test_run_graph_computes_only_ancestors():
    spec = unet_like_spec()
    params = init_params(spec, seed=4)
    x = Tensor(np.random.default_rng(2).normal(size=(6, 8, 8)))
    out = run_graph(spec, params, {"in": x}, ["enc0"])["enc0"]
    assert out.shape == (8, 8, 8)


def test_run_graph_missing_input_rejected():
    spec = unet_like_spec()
    params = init_params(spec, seed=5)
    with pytest.raises(GraphError, match="missing input"):
        run_graph(spec, params, {}, ["head"])


def test_scaled_count_exact_cases():
    # the journal example: d=0.09 on 512 channels -> ceil(0.3*512)=154
    assert scaled_count(512, 9, 100) == 154
    assert scaled_count(512, 100, 100) == 512          # d=1 identity
    assert scaled_count(512, 0, 100) == 1              # floor at 1
    assert scaled_count(4, 25, 100) == 2               # sqrt(0.25)*4 = 2 exact
    assert scaled_count(10, 1, 4) == 5                 # sqrt(0.25)*10 = 5 exact
    assert scaled_count(10, 26, 100) == 6              # just past the boundary


def test_reshape_layer_float_density_route():
    node = Node("big", "conv", in_channels=512, out_channels=512, kernel=3,
                padding=1)
    out = reshape_layer(node, 0.09)
    assert (out.in_channels, out.out_channels) == (154, 154)
    same = reshape_layer(node, 1.0)
    assert (same.in_channels, same.out_channels) == (512, 512)


def test_all_ones_profile_reproduces_original():
    for spec in (chain_spec(), unet_like_spec()):
        profile = DensityProfile([
            LayerDensity(n.name, n.in_channels * n.out_channels * n.kernel ** 2, 0)
            for n in spec.nodes.values()
            if n.learned and n.role == "prunable"])
        for strategy in ("min", "max"):
            rebuilt = unify_channels(reshape_spec(spec, profile), strategy)
            assert rebuilt.to_json_dict() == spec.to_json_dict()


def _toy_profile(spec, densities):
    layers = []
    for node in spec.nodes.values():
        if node.learned and node.role == "prunable":
            k = node.in_channels * node.out_channels * node.kernel ** 2
            d = densities[node.name]
            layers.append(LayerDensity(node.name, k, round(k * (1 - d))))
    return DensityProfile(layers)


def test_chain_unification_min_vs_max_hand_checked():
    spec = chain_spec((4, 8, 16, 4))
    profile = _toy_profile(spec, {"conv1": 1.0, "conv2": 0.25, "conv3": 1.0})
    prov = reshape_spec(spec, profile)
    # provisional: conv1 (4->8), conv2 (4->8), conv3 (16->4)
    assert (prov.nodes["conv2"].in_channels,
            prov.nodes["conv2"].out_channels) == (4, 8)

    lo = unify_channels(prov, "min")
    assert [(lo.nodes[n].in_channels, lo.nodes[n].out_channels)
            for n in ("conv1", "conv2", "conv3")] == [(4, 4), (4, 8), (8, 4)]
    hi = unify_channels(prov, "max")
    assert [(hi.nodes[n].in_channels, hi.nodes[n].out_channels)
            for n in ("conv1", "conv2", "conv3")] == [(4, 8), (8, 16), (16, 4)]
    assert hi.param_count() >= lo.param_count()


def test_unify_respects_pinned_input_and_head():
    spec = unet_like_spec()
    profile = _toy_profile(spec, {"enc0": 0.1, "enc1": 0.2, "dec0": 0.3})
    for strategy in ("min", "max"):
        out = unify_channels(reshape_spec(spec, profile), strategy)
        out.validate()
        assert out.nodes["enc0"].in_channels == 6        # data-pinned
        assert out.nodes["head"].out_channels == 9       # semantics-pinned
        # concat consumer sums its producers
        flow = out.channel_flow()
        assert out.nodes["dec0"].in_channels == \
            out.nodes["enc0"].out_channels + out.nodes["enc1"].out_channels
        assert flow["head"] == 9


def test_max_dominates_min_on_random_profiles():
    rng = np.random.default_rng(11)
    for trial in range(20):
        spec = unet_like_spec() if trial % 2 else chain_spec((4, 8, 16, 4))
        densities = {n.name: float(rng.uniform(0.05, 1.0))
                     for n in spec.nodes.values()
                     if n.learned and n.role == "prunable"}
        profile = _toy_profile(spec, densities)
        prov = reshape_spec(spec, profile)
        lo = unify_channels(prov, "min")
        hi = unify_channels(prov, "max")
        lo.validate()
        hi.validate()
        assert hi.param_count() >= lo.param_count()


def test_provisional_count_within_ceiling_slack():
    # reshaped layer carries at most (sqrt(d)C_in+1)(sqrt(d)C_out+1)q^2 weights
    rng = np.random.default_rng(23)
    for _ in range(50):
        c_in = int(rng.integers(1, 64))
        c_out = int(rng.integers(1, 64))
        q = int(rng.choice([1, 3, 5]))
        k = c_in * c_out * q * q
        zeros = int(rng.integers(0, k + 1))
        node = Node("l", "conv", in_channels=c_in, out_channels=c_out, kernel=q)
        new = reshape_layer(node, LayerDensity("l", k, zeros))
        d = 1 - zeros / k
        bound = (np.sqrt(d) * c_in + 1) * (np.sqrt(d) * c_out + 1) * q * q
        count = new.in_channels * new.out_channels * q * q
        assert count <= bound + 1e-9
        assert count >= q * q


def test_profile_density_exact_zero_counting():
    spec = chain_spec((2, 3, 3, 2))
    params = init_params(spec, seed=9)
    w = params["conv2.weight"].data
    w.reshape(-1)[: w.size // 3] = 0.0
    w.reshape(-1)[-1] = 1e-300          # tiny but nonzero stays counted
    profile = profile_density(spec, params)
    entry = profile.by_layer()["conv2"]
    assert entry.zeros == w.size // 3
    assert 0 < profile.global_density < 1
    # global density is the K-weighted mean of layer densities
    total = sum(l.total for l in profile.layers)
    weighted = sum(l.total * l.density for l in profile.layers) / total
    assert profile.global_density == pytest.approx(weighted, abs=1e-15)


def test_profile_json_roundtrip():
    spec = chain_spec()
    params = init_params(spec, seed=10)
    params["conv1.weight"].data[0] = 0.0
    profile = profile_density(spec, params)
    payload = profile.to_json_dict()
    assert set(payload) == {"layers", "global_density"}
    assert set(payload["layers"][0]) == {"layer", "K", "zeros", "sparsity",
                                         "density"}
    back = DensityProfile.from_json_dict(payload)
    assert back.to_json_dict() == payload


def test_rebuild_model_shapes_and_determinism():
    spec = unet_like_spec()
    profile = _toy_profile(spec, {"enc0": 0.5, "enc1": 0.5, "dec0": 0.5})
    compact = unify_channels(reshape_spec(spec, profile), "min")
    p1 = rebuild_model(compact, seed=7)
    p2 = rebuild_model(compact, seed=7)
    check_params(compact, p1)
    for name in p1:
        assert np.array_equal(p1[name].data, p2[name].data)
    assert compact.param_count() < spec.param_count()
