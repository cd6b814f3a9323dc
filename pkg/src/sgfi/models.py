"""Frame-interpolation networks at configurable toy scale.

Two models share one graph language (``sgfi.arch``):

* The **baseline**: a U-Net over the concatenated input frames whose
  head convolutions emit two adaptive-collaboration warp parameter sets
  (per-pixel kernel weights plus vertical/horizontal offsets, one set
  per direction) and a sigmoid occlusion mask.  Both frames are warped
  toward the midpoint and blended by the mask.

* The **enhanced** model: on top of any baseline-shaped backbone
  (typically the compressed one) it adds an optional bank of 1x1
  convolutions filtering the encoder activations into a feature
  pyramid, warps every level with both parameter sets, synthesizes a
  second candidate frame with a grid of residual conv blocks (rows at
  different scales, first half of the columns connecting downward,
  second half upward), and finally blends the two candidates through a
  second sigmoid mask ("path selection").

The enhancement nodes live in the same ``ArchSpec`` as the backbone but
form a second component whose inputs are the warped feature maps, since
warping happens outside the graph.  ``run_graph`` only executes the
ancestors of requested outputs, so each forward makes two graph calls:
backbone (heads + pyramid), then synthesis grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sgfi import nn
from sgfi.adacof import (AdaCofConfig, AdaCofParams, adacof_warp,
                         occlusion_blend)
from sgfi.arch import ArchSpec, GraphError, Node, init_params, run_graph
from sgfi.autodiff import ShapeError, Tensor

HEAD_NAMES = ("head_w_fwd", "head_dy_fwd", "head_dx_fwd",
              "head_w_bwd", "head_dy_bwd", "head_dx_bwd", "head_occ")
PATH_MASK_NAME = "head_path"


@dataclass(frozen=True)
class InterpConfig:
    """Scale knobs for both models; defaults are desk scale."""

    frame_channels: int = 3
    encoder_widths: tuple = (16, 32, 64)
    convs_per_level: int = 2
    kernel_size: int = 3
    dilation: int = 1
    pyramid_widths: tuple = (4, 8, 12, 16, 20)
    pyramid_filtered: bool = True
    grid_rows: int = 3
    grid_cols: int = 6
    grid_widths: tuple = (32, 64, 96)
    path_select: bool = True

    def __post_init__(self):
        if len(self.encoder_widths) < 1:
            raise ValueError("encoder_widths must be non-empty")
        if self.convs_per_level < 1:
            raise ValueError("convs_per_level must be >= 1")
        if self.grid_rows < 1 or self.grid_cols < 2:
            raise ValueError("grid needs >= 1 row and >= 2 columns")
        if len(self.grid_widths) < self.grid_rows:
            raise ValueError(f"{self.grid_rows} grid rows but only "
                             f"{len(self.grid_widths)} widths")
        self.adacof()  # validates kernel_size / dilation

    def adacof(self) -> AdaCofConfig:
        return AdaCofConfig(self.kernel_size, self.dilation)


@dataclass
class ModelOutputs:
    """Everything a forward pass produces, for losses and inspection."""

    i_final: Tensor
    i_path1: Tensor
    v1: Tensor
    params_fwd: AdaCofParams
    params_bwd: AdaCofParams
    i_path2: Tensor | None = None
    v2: Tensor | None = None


# ---------------------------------------------------------------------------
# Baseline builder


def build_baseline_spec(cfg: InterpConfig) -> ArchSpec:
    """U-Net backbone with warp-parameter and occlusion-mask heads."""
    widths = cfg.encoder_widths
    levels = len(widths)
    taps = cfg.adacof().taps
    nodes = [Node(name="frames", kind="input",
                  out_channels=2 * cfg.frame_channels)]
    edges = []

    def conv(name, cin, cout, *, kernel=3, stride=1, activation="relu",
             role="prunable", src=None):
        nodes.append(Node(name=name, kind="conv", in_channels=cin,
                          out_channels=cout, kernel=kernel, stride=stride,
                          padding=(kernel - 1) // 2, activation=activation,
                          role=role))
        if src is not None:
            edges.append((src, name))
        return name

    # Encoder: conv blocks separated by average-pooling.
    prev = "frames"
    prev_ch = 2 * cfg.frame_channels
    enc_out = []
    for k, w in enumerate(widths):
        if k > 0:
            nodes.append(Node(name=f"pool{k - 1}", kind="avgpool"))
            edges.append((prev, f"pool{k - 1}"))
            prev = f"pool{k - 1}"
        for i in range(cfg.convs_per_level):
            prev = conv(f"enc{k}_conv{i}", prev_ch if i == 0 else w, w,
                        src=prev)
            prev_ch = w
        enc_out.append(prev)

    # Decoder: upsample, concat the skip, conv back down.
    for k in range(levels - 2, -1, -1):
        nodes.append(Node(name=f"up{k}", kind="upsample"))
        edges.append((prev, f"up{k}"))
        nodes.append(Node(name=f"cat{k}", kind="concat",
                          in_channels=widths[k] + prev_ch,
                          out_channels=widths[k] + prev_ch))
        edges.append((enc_out[k], f"cat{k}"))
        edges.append((f"up{k}", f"cat{k}"))
        prev = f"cat{k}"
        prev_ch = widths[k] + prev_ch
        for i in range(cfg.convs_per_level):
            prev = conv(f"dec{k}_conv{i}", prev_ch if i == 0 else widths[k],
                        widths[k], src=prev)
            prev_ch = widths[k]

    # Heads: per-direction kernel weights (softmax over taps), vertical
    # and horizontal offsets, plus the occlusion mask.
    for direction in ("fwd", "bwd"):
        conv(f"head_w_{direction}", prev_ch, taps, activation="softmax",
             role="head", src=prev)
        conv(f"head_dy_{direction}", prev_ch, taps, activation="none",
             role="head", src=prev)
        conv(f"head_dx_{direction}", prev_ch, taps, activation="none",
             role="head", src=prev)
    conv("head_occ", prev_ch, 1, activation="sigmoid", role="head", src=prev)

    spec = ArchSpec(nodes, edges)
    spec.validate()
    return spec


def encoder_level_count(spec: ArchSpec) -> int:
    levels = 0
    while f"enc{levels}_conv0" in spec.nodes:
        levels += 1
    return levels


def _check_backbone(spec: ArchSpec) -> None:
    missing = [n for n in ("frames", *HEAD_NAMES) if n not in spec.nodes]
    if missing or encoder_level_count(spec) < 1:
        raise GraphError(f"not a baseline interpolation graph: missing "
                         f"nodes {missing or ['enc0_conv0']}")


def _encoder_tap_names(spec: ArchSpec) -> list[str]:
    """The last conv of each encoder level, shallowest first."""
    levels = encoder_level_count(spec)
    names = []
    for k in range(levels):
        i = 0
        while f"enc{k}_conv{i + 1}" in spec.nodes:
            i += 1
        names.append(f"enc{k}_conv{i}")
    return names


def trunk_name(spec: ArchSpec) -> str:
    return spec.inputs_of(HEAD_NAMES[0])[0]


# ---------------------------------------------------------------------------
# Enhanced builder


def pyramid_level_widths(spec: ArchSpec, cfg: InterpConfig) -> list[int]:
    """Channel width of each pyramid level the enhanced model feeds the
    grid: filtered widths when the 1x1 bank is enabled, otherwise the
    raw encoder widths of ``spec``."""
    taps = _encoder_tap_names(spec)
    if cfg.pyramid_filtered:
        if len(taps) > len(cfg.pyramid_widths):
            raise GraphError(
                f"{len(taps)} encoder levels exceed the configured "
                f"{len(cfg.pyramid_widths)} pyramid widths")
        return [int(w) for w in cfg.pyramid_widths[:len(taps)]]
    return [spec.nodes[t].out_channels for t in taps]


def build_enhanced_spec(backbone: ArchSpec, cfg: InterpConfig) -> ArchSpec:
    """Attach pyramid filters, the synthesis grid, and the path mask.

    ``backbone`` is any baseline-shaped graph — typically the compact
    one — and is copied, never mutated.  Widths of existing nodes are
    read from the graph itself so compressed backbones work unchanged.
    """
    _check_backbone(backbone)
    spec = backbone.copy()
    nodes = list(spec.nodes.values())
    edges = list(spec.edges)
    trunk = trunk_name(spec)
    trunk_ch = spec.nodes[trunk].out_channels
    enc_taps = _encoder_tap_names(spec)
    level_widths = pyramid_level_widths(spec, cfg)

    def conv(name, cin, cout, src, *, kernel=3, stride=1, activation="none",
             role="fixed"):
        nodes.append(Node(name=name, kind="conv", in_channels=cin,
                          out_channels=cout, kernel=kernel, stride=stride,
                          padding=(kernel - 1) // 2, activation=activation,
                          role=role))
        edges.append((src, name))
        return name

    if cfg.path_select:
        conv(PATH_MASK_NAME, trunk_ch, 1, trunk, activation="sigmoid",
             role="head")

    if cfg.pyramid_filtered:
        for k, tap in enumerate(enc_taps):
            conv(f"pyr{k}", spec.nodes[tap].out_channels, level_widths[k],
                 tap, kernel=1)

    # Injection widths per grid row: each level contributes a warped
    # pair; levels beyond the last row fold into it after resizing.
    rows = min(cfg.grid_rows, len(level_widths))
    grid_w = [int(w) for w in cfg.grid_widths[:rows]]
    inj = [2 * w for w in level_widths[:rows]]
    inj[rows - 1] += sum(2 * w for w in level_widths[rows:])

    state = []
    for r in range(rows):
        nodes.append(Node(name=f"warped{r}", kind="input",
                          out_channels=inj[r]))
        state.append(conv(f"grid_entry{r}", inj[r], grid_w[r], f"warped{r}"))

    cols = cfg.grid_cols
    down_cols = range(1, cols // 2 + 1)
    for c in range(1, cols + 1):
        order = range(rows) if c in down_cols else range(rows - 1, -1, -1)
        new_state = list(state)
        for r in order:
            a = conv(f"grid_c{c}r{r}_a", grid_w[r], grid_w[r], state[r],
                     activation="relu")
            b = conv(f"grid_c{c}r{r}_b", grid_w[r], grid_w[r], a)
            summands = [state[r], b]
            if c in down_cols and r > 0:
                summands.append(conv(f"grid_c{c}r{r}_down", grid_w[r - 1],
                                     grid_w[r], new_state[r - 1], stride=2))
            if c not in down_cols and r < rows - 1:
                nodes.append(Node(name=f"grid_c{c}r{r}_us", kind="upsample"))
                edges.append((new_state[r + 1], f"grid_c{c}r{r}_us"))
                summands.append(conv(f"grid_c{c}r{r}_up", grid_w[r + 1],
                                     grid_w[r], f"grid_c{c}r{r}_us"))
            nodes.append(Node(name=f"grid_c{c}r{r}_sum", kind="add",
                              in_channels=grid_w[r], out_channels=grid_w[r]))
            for s in summands:
                edges.append((s, f"grid_c{c}r{r}_sum"))
            new_state[r] = f"grid_c{c}r{r}_sum"
        state = new_state

    conv("grid_out", grid_w[0], spec.nodes["frames"].out_channels // 2,
         state[0])

    out = ArchSpec(nodes, edges)
    out.validate()
    return out


def init_model_params(spec: ArchSpec, seed: int,
                      warm_start: dict[str, Tensor] | None = None,
                      path_bias: float = 2.0) -> dict[str, Tensor]:
    """Fresh parameters for ``spec``, optionally copying matching slots
    from ``warm_start`` (same name and shape).

    The path-selection mask's bias starts positive so the blend leans
    on the already-trained warping path while the synthesis grid is
    still random.
    """
    params = init_params(spec, seed)
    if warm_start is not None:
        for name, value in warm_start.items():
            arr = value if isinstance(value, np.ndarray) else value.data
            if name in params and params[name].shape == arr.shape:
                params[name] = Tensor(arr.astype(np.float64).copy(),
                                      requires_grad=True)
    key = f"{PATH_MASK_NAME}.bias"
    if key in params and (warm_start is None or key not in warm_start):
        params[key] = Tensor(np.full(1, float(path_bias)), requires_grad=True)
    return params


# ---------------------------------------------------------------------------
# Forward passes


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, np.float64))


def _check_mask_open_interval(name: str, mask: Tensor) -> None:
    lo, hi = float(mask.data.min()), float(mask.data.max())
    if not (0.0 < lo and hi < 1.0):
        raise ValueError(f"{name} left (0,1): range [{lo}, {hi}]")


def _warp_params(outs: dict[str, Tensor], direction: str) -> AdaCofParams:
    return AdaCofParams(weights=outs[f"head_w_{direction}"],
                        alpha=outs[f"head_dy_{direction}"],
                        beta=outs[f"head_dx_{direction}"])


def baseline_forward(spec: ArchSpec, params: dict[str, Tensor], i0, i1,
                     cfg: InterpConfig) -> ModelOutputs:
    """Warp both frames to the midpoint and blend by the occlusion mask."""
    i0, i1 = _as_tensor(i0), _as_tensor(i1)
    if i0.shape != i1.shape:
        raise ShapeError(f"frames {i0.shape} and {i1.shape} differ")
    x = nn.concat_channels(i0, i1)
    outs = run_graph(spec, params, {"frames": x}, list(HEAD_NAMES))
    acfg = cfg.adacof()
    params_fwd = _warp_params(outs, "fwd")
    params_bwd = _warp_params(outs, "bwd")
    v1 = outs["head_occ"]
    _check_mask_open_interval("occlusion mask", v1)
    i_path1 = occlusion_blend(adacof_warp(i0, params_fwd, acfg),
                              adacof_warp(i1, params_bwd, acfg), v1)
    return ModelOutputs(i_final=i_path1, i_path1=i_path1, v1=v1,
                        params_fwd=params_fwd, params_bwd=params_bwd)


def _pool_params(p: AdaCofParams, times: int) -> AdaCofParams:
    """Halve the parameter fields ``times`` times.  Averaging keeps the
    kernel weights convex; offsets are divided by the scale factor so
    they stay in the coarser level's own pixel units."""
    w, dy, dx = p.weights, p.alpha, p.beta
    for _ in range(times):
        w, dy, dx = nn.avgpool2x(w), nn.avgpool2x(dy), nn.avgpool2x(dx)
    if times:
        scale = 0.5 ** times
        dy, dx = dy * scale, dx * scale
    return AdaCofParams(weights=w, alpha=dy, beta=dx)


def warp_pyramid(features: list[Tensor], params_fwd: AdaCofParams,
                 params_bwd: AdaCofParams, cfg: AdaCofConfig
                 ) -> list[tuple[Tensor, Tensor]]:
    """Warp every pyramid level with both parameter sets.

    Level k is assumed to be at 1/2^k of the full resolution the
    parameters were predicted at; a mismatched level is rejected by the
    warp's geometry check."""
    pairs = []
    for k, feat in enumerate(features):
        pf = _pool_params(params_fwd, k)
        pb = _pool_params(params_bwd, k)
        pairs.append((adacof_warp(feat, pf, cfg),
                      adacof_warp(feat, pb, cfg)))
    return pairs


def synthesis_forward(spec: ArchSpec, params: dict[str, Tensor],
                      warped_pairs: list[tuple[Tensor, Tensor]]) -> Tensor:
    """Feed warped feature pairs into the grid; returns the synthesized
    frame.  Levels beyond the grid's rows are bilinearly resized to the
    deepest row's resolution and concatenated into its injection."""
    rows = 0
    while f"warped{rows}" in spec.nodes:
        rows += 1
    if rows == 0:
        raise GraphError("graph has no synthesis grid")
    if len(warped_pairs) < rows:
        raise GraphError(f"grid expects >= {rows} pyramid levels, "
                         f"got {len(warped_pairs)}")
    injections = {}
    for r in range(rows):
        injections[f"warped{r}"] = nn.concat_channels(*warped_pairs[r])
    deep = injections[f"warped{rows - 1}"]
    target_hw = deep.shape[-2:]
    for wf, wb in warped_pairs[rows:]:
        extra = nn.concat_channels(wf, wb)
        deep = nn.concat_channels(deep, nn.bilinear_resize(extra, target_hw))
    injections[f"warped{rows - 1}"] = deep
    return run_graph(spec, params, injections, ["grid_out"])["grid_out"]


def path_select(i_path1: Tensor, i_path2: Tensor, v2: Tensor) -> Tensor:
    """Final blend: v2 weighs the warping path against the synthesis
    path, pixel by pixel."""
    return occlusion_blend(i_path1, i_path2, v2)


def enhanced_forward(spec: ArchSpec, params: dict[str, Tensor], i0, i1,
                     cfg: InterpConfig) -> ModelOutputs:
    """Baseline path plus feature-pyramid synthesis and path selection."""
    i0, i1 = _as_tensor(i0), _as_tensor(i1)
    if i0.shape != i1.shape:
        raise ShapeError(f"frames {i0.shape} and {i1.shape} differ")
    enc_taps = _encoder_tap_names(spec)
    feat_names = [f"pyr{k}" for k in range(len(enc_taps))] \
        if cfg.pyramid_filtered else enc_taps
    if any(n not in spec.nodes for n in feat_names):
        raise GraphError("graph lacks the configured pyramid filters")
    want_mask = cfg.path_select
    if want_mask and PATH_MASK_NAME not in spec.nodes:
        raise GraphError("graph lacks the path-selection head")

    x = nn.concat_channels(i0, i1)
    wanted = list(HEAD_NAMES) + feat_names \
        + ([PATH_MASK_NAME] if want_mask else [])
    outs = run_graph(spec, params, {"frames": x}, wanted)

    acfg = cfg.adacof()
    params_fwd = _warp_params(outs, "fwd")
    params_bwd = _warp_params(outs, "bwd")
    v1 = outs["head_occ"]
    _check_mask_open_interval("occlusion mask", v1)
    i_path1 = occlusion_blend(adacof_warp(i0, params_fwd, acfg),
                              adacof_warp(i1, params_bwd, acfg), v1)

    features = [outs[n] for n in feat_names]
    pairs = warp_pyramid(features, params_fwd, params_bwd, acfg)
    i_path2 = synthesis_forward(spec, params, pairs)

    if want_mask:
        v2 = outs[PATH_MASK_NAME]
        _check_mask_open_interval("path-selection mask", v2)
        i_final = path_select(i_path1, i_path2, v2)
    else:
        v2 = None
        i_final = i_path2
    return ModelOutputs(i_final=i_final, i_path1=i_path1, v1=v1,
                        params_fwd=params_fwd, params_bwd=params_bwd,
                        i_path2=i_path2, v2=v2)
