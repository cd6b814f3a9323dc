"""Experiment orchestration: training, evaluation, and the two-stage runs.

Stage 1 takes a dense baseline interpolator through sparsified training,
density profiling, architecture reconstruction, and retraining of the
compact model.  Stage 2 grows the enhancement paths (feature pyramid,
grid synthesis, path selection) on top of the compact backbone and
trains them.  Every sub-stage is wrapped so a failure names the stage
that caused it.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from sgfi import optim
from sgfi.arch import ArchSpec, GraphError
from sgfi.autodiff import Tensor, backward, finite_diff_check, zero_grads
from sgfi.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from sgfi.compress import (DensityProfile, profile_density, rebuild_model,
                           reshape_spec, unify_channels)
from sgfi.data import (TripletSample, generate_dataset, load_dataset,
                       read_ppm, write_ppm)
from sgfi.losses import (FeatureLossPlugin, LossWeights, charbonnier_loss,
                         total_loss, tv_loss)
from sgfi.metrics import psnr, ssim
from sgfi.models import (PATH_MASK_NAME, InterpConfig, baseline_forward,
                         build_baseline_spec, build_enhanced_spec,
                         enhanced_forward, init_model_params)
from sgfi import nn
from sgfi.adacof import AdaCofConfig, AdaCofParams, adacof_warp


# ---------------------------------------------------------------------------
# configuration

@dataclass
class PipelineConfig:
    """Flat bag of every knob the pipeline and CLI expose.

    Tuple-valued fields are parsed from comma-separated integers in
    config files ("16,32,64").
    """

    # locations
    data_dir: str = ""
    val_dir: str = ""
    out_dir: str = "out"

    # dataset generation
    frame_size: int = 64
    train_count: int = 200
    val_count: int = 20
    max_shapes: int = 4
    velocity_min: float = 0.5
    velocity_max: float = 4.0
    rotation_min: float = 0.0
    rotation_max: float = 0.8

    # model
    encoder_widths: tuple = (16, 32, 64)
    convs_per_level: int = 2
    kernel_size: int = 5
    dilation: int = 1
    pyramid_widths: tuple = (4, 8, 12, 16, 20)
    pyramid_filtered: bool = True
    grid_rows: int = 3
    grid_cols: int = 6
    grid_widths: tuple = (32, 64, 96)
    path_select: bool = True

    # loss
    epsilon: float = 0.001
    lambda_tv: float = 0.01
    lambda_feat: float = 0.005
    feature_loss: bool = False

    # training
    seed: int = 0
    epochs: int = 20
    batch_size: int = 8
    lr: float = 0.001
    lr_halve_every: int = 20

    # stage 1
    sparsify_epochs: int = 20
    p_step_epochs: int = -1          # -1 -> half of the epochs (rounded up)
    sparsify_lr: float = 0.001
    l1_weight: float = 1.0
    sparsify_subset: int = 0         # 0 -> use the whole training set
    unify: str = "min"
    retrain_epochs: int = 20

    # stage 2
    enhance_epochs: int = 20
    path_bias: float = 2.0

    def interp_config(self) -> InterpConfig:
        return InterpConfig(
            encoder_widths=tuple(self.encoder_widths),
            convs_per_level=self.convs_per_level,
            kernel_size=self.kernel_size,
            dilation=self.dilation,
            pyramid_widths=tuple(self.pyramid_widths),
            pyramid_filtered=self.pyramid_filtered,
            grid_rows=self.grid_rows,
            grid_cols=self.grid_cols,
            grid_widths=tuple(self.grid_widths),
            path_select=self.path_select,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(epsilon=self.epsilon, lambda_tv=self.lambda_tv,
                           lambda_feat=self.lambda_feat)


# ---------------------------------------------------------------------------
# stage wrapping

class StageError(RuntimeError):
    """A pipeline sub-stage failed; the message names the stage."""


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(f"stage {name!r} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# small helpers

def tensors_from(arrays: dict[str, np.ndarray],
                 trainable: bool = True) -> dict[str, Tensor]:
    """Wrap loaded checkpoint arrays as (optionally trainable) tensors."""
    return {name: Tensor(np.array(a, dtype=np.float64), requires_grad=trainable)
            for name, a in arrays.items()}


def _stack_batch(samples: list[TripletSample]) -> tuple[Tensor, Tensor, Tensor]:
    i0 = Tensor(np.stack([s.i0 for s in samples]))
    i1 = Tensor(np.stack([s.i1 for s in samples]))
    gt = Tensor(np.stack([s.i_gt for s in samples]))
    return i0, i1, gt


def _checkpoint_meta(cfg: PipelineConfig, kind: str, optimizer: str,
                     epochs: int) -> dict:
    return {
        "kind": kind,
        "optimizer": optimizer,
        "epochs": int(epochs),
        "seed": int(cfg.seed),
        "kernel_size": int(cfg.kernel_size),
        "dilation": int(cfg.dilation),
        "pyramid_filtered": bool(cfg.pyramid_filtered),
        "path_select": bool(cfg.path_select),
    }


def forward_for(ckpt: Checkpoint):
    """Pick the forward function and config matching a checkpoint.

    The graph itself says whether the enhancement paths exist; the warp
    geometry (kernel size, dilation) comes from checkpoint metadata,
    falling back to the head width for the kernel.
    """
    spec = ckpt.spec
    if "head_w_fwd" not in spec.nodes:
        raise GraphError("checkpoint does not contain an interpolation model")
    taps = spec.nodes["head_w_fwd"].out_channels
    default_f = int(round(taps ** 0.5))
    f = int(ckpt.meta.get("kernel_size", default_f))
    d = int(ckpt.meta.get("dilation", 1))
    enhanced = "grid_out" in spec.nodes
    cfg = InterpConfig(
        kernel_size=f,
        dilation=d,
        pyramid_filtered="pyr0" in spec.nodes,
        path_select=PATH_MASK_NAME in spec.nodes,
    )
    return (enhanced_forward if enhanced else baseline_forward), cfg


# ---------------------------------------------------------------------------
# training

def train_model(spec: ArchSpec, params: dict[str, Tensor],
                dataset: list[TripletSample], cfg: PipelineConfig, *,
                forward, epochs: int, seed: int) -> list[float]:
    """AdaMax training on shuffled mini-batches.

    Returns the mean training loss per epoch.  The shuffle is seeded per
    epoch so identical runs produce identical trajectories.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    icfg = cfg.interp_config()
    weights = cfg.loss_weights()
    plugin = None
    if cfg.feature_loss:
        plugin = FeatureLossPlugin.create(seed=seed, enabled=True)
    state = optim.AdaMaxState()
    leaves = list(params.values())
    history: list[float] = []
    n = len(dataset)
    for epoch in range(epochs):
        lr = optim.lr_schedule(cfg.lr, epoch, cfg.lr_halve_every)
        order = np.random.default_rng([seed, epoch]).permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            i0, i1, gt = _stack_batch(batch)
            zero_grads(leaves)
            out = forward(spec, params, i0, i1, icfg)
            loss = total_loss(out, gt, weights, plugin)
            backward(loss, leaves=leaves)
            optim.adamax_step(state, params, lr)
            epoch_losses.append(loss.item())
        history.append(float(np.mean(epoch_losses)))
    return history


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    """Quality and size summary for one checkpoint on one dataset."""

    per_sample_psnr: list[float]
    per_sample_ssim: list[float]
    mean_psnr: float
    mean_ssim: float
    param_count: int
    seconds_per_frame: float

    def to_json_dict(self) -> dict:
        return {
            "per_sample_psnr": self.per_sample_psnr,
            "per_sample_ssim": self.per_sample_ssim,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "param_count": self.param_count,
            "seconds_per_frame": self.seconds_per_frame,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "EvalReport":
        try:
            return cls(
                per_sample_psnr=[float(v) for v in payload["per_sample_psnr"]],
                per_sample_ssim=[float(v) for v in payload["per_sample_ssim"]],
                mean_psnr=float(payload["mean_psnr"]),
                mean_ssim=float(payload["mean_ssim"]),
                param_count=int(payload["param_count"]),
                seconds_per_frame=float(payload["seconds_per_frame"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed eval report: {exc}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_json_dict(json.load(fh))


def checkpoint_weight_count(ckpt: Checkpoint) -> int:
    """Learned weight entries enumerated straight from the tensor table."""
    return sum(int(np.prod(a.shape)) for name, a in ckpt.params.items()
               if name.endswith(".weight"))


def evaluate_checkpoint(ckpt: Checkpoint,
                        dataset: list[TripletSample]) -> EvalReport:
    """Run the checkpointed model over a dataset and score it."""
    if not dataset:
        raise ValueError("evaluation dataset is empty")
    forward, icfg = forward_for(ckpt)
    params = tensors_from(ckpt.params, trainable=False)
    psnrs, ssims = [], []
    elapsed = 0.0
    for sample in dataset:
        i0 = Tensor(sample.i0[np.newaxis])
        i1 = Tensor(sample.i1[np.newaxis])
        t0 = time.perf_counter()
        out = forward(ckpt.spec, params, i0, i1, icfg)
        elapsed += time.perf_counter() - t0
        pred = np.clip(out.i_final.data[0], 0.0, 1.0)
        psnrs.append(psnr(pred, sample.i_gt))
        ssims.append(ssim(pred, sample.i_gt))
    return EvalReport(
        per_sample_psnr=psnrs,
        per_sample_ssim=ssims,
        mean_psnr=float(np.mean(psnrs)),
        mean_ssim=float(np.mean(ssims)),
        param_count=checkpoint_weight_count(ckpt),
        seconds_per_frame=elapsed / len(dataset),
    )


def repeat_frame_psnr(dataset: list[TripletSample]) -> float:
    """Mean PSNR of the trivial predictor that repeats the first frame."""
    if not dataset:
        raise ValueError("dataset is empty")
    return float(np.mean([psnr(s.i0, s.i_gt) for s in dataset]))


def _val_psnr_fn(spec: ArchSpec, params: dict[str, Tensor],
                 icfg: InterpConfig, val: list[TripletSample]):
    """Batched validation PSNR closure for the sparsifier's epoch log."""
    i0, i1, gt = _stack_batch(val)

    def eval_fn(_params: dict[str, Tensor]) -> float:
        out = baseline_forward(spec, params, i0, i1, icfg)
        pred = np.clip(out.i_final.data, 0.0, 1.0)
        return float(np.mean([psnr(p, g) for p, g in zip(pred, gt.data)]))

    return eval_fn


# ---------------------------------------------------------------------------
# single pipeline steps (each also backs one CLI subcommand)

def _resolve_out(cfg: PipelineConfig, out_path, default_name: str) -> Path:
    path = Path(out_path) if out_path else Path(cfg.out_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def train_baseline(cfg: PipelineConfig, out_path=None) -> Path:
    """Train a fresh dense baseline on ``cfg.data_dir`` and save it."""
    train = load_dataset(cfg.data_dir)
    spec = build_baseline_spec(cfg.interp_config())
    params = init_model_params(spec, cfg.seed)
    train_model(spec, params, train, cfg, forward=baseline_forward,
                epochs=cfg.epochs, seed=cfg.seed)
    path = _resolve_out(cfg, out_path, "baseline.sgfi")
    save_checkpoint(path, Checkpoint(
        spec, params, _checkpoint_meta(cfg, "baseline", "adamax",
                                       cfg.epochs)))
    return path


def sparsify_checkpoint(cfg: PipelineConfig, ckpt_path, out_path=None,
                        csv_path=None) -> tuple[Path, optim.DensityTrajectory]:
    """Continue a baseline checkpoint with l1-sparsified training."""
    ckpt = load_checkpoint(ckpt_path)
    spec = ckpt.spec
    params = tensors_from(ckpt.params)
    icfg = cfg.interp_config()
    train = load_dataset(cfg.data_dir)
    val = load_dataset(cfg.val_dir) if cfg.val_dir else []
    subset = train[:cfg.sparsify_subset] if cfg.sparsify_subset else train
    if not subset:
        raise ValueError("sparsify subset is empty")
    weights = cfg.loss_weights()

    def data_loss(batch: list[TripletSample]) -> Tensor:
        i0, i1, gt = _stack_batch(batch)
        out = baseline_forward(spec, params, i0, i1, icfg)
        return total_loss(out, gt, weights, None)

    problem = optim.SparsifyProblem(params=params, loss_fn=data_loss,
                                    l1_weight=cfg.l1_weight)
    schedule = optim.ObproxSchedule(
        total_epochs=cfg.sparsify_epochs,
        p_step_epochs=(None if cfg.p_step_epochs < 0 else cfg.p_step_epochs),
        lr=cfg.sparsify_lr,
        lr_halve_every=cfg.lr_halve_every,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
    )
    eval_fn = _val_psnr_fn(spec, params, icfg, val) if val else None
    trajectory = optim.sparsify(problem, schedule, subset, eval_fn)
    csv = _resolve_out(cfg, csv_path, "trajectory.csv")
    trajectory.to_csv(csv)
    path = _resolve_out(cfg, out_path, "sparse.sgfi")
    save_checkpoint(path, Checkpoint(
        spec, params, _checkpoint_meta(cfg, "baseline", "obprox",
                                       cfg.sparsify_epochs)))
    return path, trajectory


def profile_checkpoint(ckpt_path, out_path=None) -> DensityProfile:
    """Per-layer density of a sparse checkpoint, optionally saved as JSON."""
    ckpt = load_checkpoint(ckpt_path)
    profile = profile_density(ckpt.spec, tensors_from(ckpt.params,
                                                      trainable=False))
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="ascii") as fh:
            json.dump(profile.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return profile


def reconstruct_checkpoint(ckpt_path, strategy: str,
                           out_path=None) -> ArchSpec:
    """Compact architecture implied by a sparse checkpoint's densities."""
    ckpt = load_checkpoint(ckpt_path)
    profile = profile_density(ckpt.spec, tensors_from(ckpt.params,
                                                      trainable=False))
    compact = unify_channels(reshape_spec(ckpt.spec, profile), strategy)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        compact.to_json(out_path)
    return compact


def retrain_compact(cfg: PipelineConfig, spec_path, out_path=None) -> Path:
    """Train a freshly initialized compact architecture from its spec."""
    compact_spec = ArchSpec.from_json(spec_path)
    train = load_dataset(cfg.data_dir)
    params = rebuild_model(compact_spec, cfg.seed)
    train_model(compact_spec, params, train, cfg, forward=baseline_forward,
                epochs=cfg.retrain_epochs, seed=cfg.seed)
    path = _resolve_out(cfg, out_path, "compact.sgfi")
    save_checkpoint(path, Checkpoint(
        compact_spec, params, _checkpoint_meta(cfg, "baseline", "adamax",
                                               cfg.retrain_epochs)))
    return path


def enhance_checkpoint(cfg: PipelineConfig, compact_path,
                       out_path=None) -> Path:
    """Grow pyramid/grid/path heads on a compact backbone and train them."""
    compact = load_checkpoint(compact_path)
    icfg = cfg.interp_config()
    espec = build_enhanced_spec(compact.spec, icfg)
    params = init_model_params(espec, cfg.seed, warm_start=compact.params,
                               path_bias=cfg.path_bias)
    train = load_dataset(cfg.data_dir)
    train_model(espec, params, train, cfg, forward=enhanced_forward,
                epochs=cfg.enhance_epochs, seed=cfg.seed)
    path = _resolve_out(cfg, out_path, "enhanced.sgfi")
    save_checkpoint(path, Checkpoint(
        espec, params, _checkpoint_meta(cfg, "enhanced", "adamax",
                                        cfg.enhance_epochs)))
    return path


# ---------------------------------------------------------------------------
# stage 1: sparsify, profile, reconstruct, retrain

@dataclass
class Stage1Result:
    """Artifacts of the compression stage."""

    baseline_path: Path
    sparse: Checkpoint
    sparse_path: Path
    trajectory: optim.DensityTrajectory
    trajectory_path: Path
    profile: DensityProfile
    profile_path: Path
    compact_spec: ArchSpec
    compact_spec_path: Path
    compact: Checkpoint
    compact_path: Path


def run_stage1(cfg: PipelineConfig) -> Stage1Result:
    """Dense baseline -> sparse -> profile -> compact spec -> retrained.

    Every sub-stage reads its inputs from and writes its outputs to
    ``cfg.out_dir``, so the run is equivalent to invoking the matching
    CLI subcommands in sequence.  A failure is re-raised as
    :class:`StageError` naming the sub-stage.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with _stage("load-data"):
        if not load_dataset(cfg.data_dir):
            raise ValueError("training dataset is empty")
        if cfg.val_dir:
            load_dataset(cfg.val_dir)

    with _stage("baseline"):
        baseline_path = train_baseline(cfg)

    with _stage("sparsify"):
        sparse_path, trajectory = sparsify_checkpoint(cfg, baseline_path)

    with _stage("profile"):
        profile_path = out_dir / "profile.json"
        profile = profile_checkpoint(sparse_path, profile_path)

    with _stage("reconstruct"):
        compact_spec_path = out_dir / "compact_spec.json"
        compact_spec = reconstruct_checkpoint(sparse_path, cfg.unify,
                                              compact_spec_path)

    with _stage("retrain"):
        compact_path = retrain_compact(cfg, compact_spec_path)

    return Stage1Result(
        baseline_path=baseline_path,
        sparse=load_checkpoint(sparse_path), sparse_path=sparse_path,
        trajectory=trajectory, trajectory_path=out_dir / "trajectory.csv",
        profile=profile, profile_path=profile_path,
        compact_spec=compact_spec, compact_spec_path=compact_spec_path,
        compact=load_checkpoint(compact_path), compact_path=compact_path,
    )


# ---------------------------------------------------------------------------
# stage 2: grow and train the enhancement paths

@dataclass
class Stage2Result:
    """Artifacts of the enhancement stage."""

    enhanced: Checkpoint
    enhanced_path: Path


def run_stage2(cfg: PipelineConfig,
               compact_path: str | Path | None = None) -> Stage2Result:
    """Grow pyramid/grid/path heads on a compact backbone and train."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with _stage("load-compact"):
        path = Path(compact_path) if compact_path else out_dir / "compact.sgfi"
        compact = load_checkpoint(path)

    with _stage("enhance-build"):
        build_enhanced_spec(compact.spec, cfg.interp_config())

    with _stage("enhance-train"):
        enhanced_path = enhance_checkpoint(cfg, path)

    return Stage2Result(enhanced=load_checkpoint(enhanced_path),
                        enhanced_path=enhanced_path)


# ---------------------------------------------------------------------------
# data generation and single-pair inference

def generate_datasets(cfg: PipelineConfig) -> tuple[Path, Path]:
    """Write seeded train and validation sets under the output directory."""
    out_dir = Path(cfg.out_dir)
    train_dir = out_dir / "train"
    val_dir = out_dir / "val"
    kwargs = dict(
        height=cfg.frame_size, width=cfg.frame_size,
        max_shapes=cfg.max_shapes,
        velocity_range=(cfg.velocity_min, cfg.velocity_max),
        rotation_range=(cfg.rotation_min, cfg.rotation_max),
    )
    generate_dataset(train_dir, cfg.train_count, seed=cfg.seed,
                     split="train", **kwargs)
    generate_dataset(val_dir, cfg.val_count, seed=cfg.seed + 1,
                     split="val", **kwargs)
    return train_dir, val_dir


def interpolate_pair(ckpt_path, in0_path, in1_path, out_path) -> Path:
    """Read two frames, synthesize the midpoint, write it as a PPM."""
    ckpt = load_checkpoint(ckpt_path)
    forward, icfg = forward_for(ckpt)
    i0 = read_ppm(in0_path)
    i1 = read_ppm(in1_path)
    params = tensors_from(ckpt.params, trainable=False)
    out = forward(ckpt.spec, params, Tensor(i0[np.newaxis]),
                  Tensor(i1[np.newaxis]), icfg)
    write_ppm(out_path, np.clip(out.i_final.data[0], 0.0, 1.0))
    return Path(out_path)


# ---------------------------------------------------------------------------
# gradient audit

def _audit_conv(rng: np.random.Generator, report: dict) -> None:
    x = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
    w = Tensor(0.3 * rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
    b = Tensor(0.1 * rng.standard_normal(4), requires_grad=True)

    def layer(wt, bt):
        return nn.Conv2dLayer(3, 4, 3, 1, 1, weights=wt, bias=bt)

    report["conv2d_input"] = finite_diff_check(
        lambda t: nn.conv2d(t, layer(w, b)).sum(), x)
    report["conv2d_weight"] = finite_diff_check(
        lambda t: nn.conv2d(x, layer(t, b)).sum(), w)
    report["conv2d_bias"] = finite_diff_check(
        lambda t: nn.conv2d(x, layer(w, t)).sum(), b)


def _audit_sampling(rng: np.random.Generator, report: dict) -> None:
    img = Tensor(rng.random((2, 5, 5)), requires_grad=True)
    y = Tensor(np.array(2.3), requires_grad=True)
    x = Tensor(np.array(1.7), requires_grad=True)
    report["bilinear_image"] = finite_diff_check(
        lambda t: nn.bilinear_sample(t, y, x, channel=1), img)
    report["bilinear_y"] = finite_diff_check(
        lambda t: nn.bilinear_sample(img, t, x, channel=0), y)
    report["bilinear_x"] = finite_diff_check(
        lambda t: nn.bilinear_sample(img, y, t, channel=0), x)

    logits = Tensor(rng.standard_normal((1, 4, 3, 3)), requires_grad=True)
    proj = Tensor(rng.standard_normal((1, 4, 3, 3)))
    report["channel_softmax"] = finite_diff_check(
        lambda t: (nn.channel_softmax(t) * proj).sum(), logits)


def _audit_warp(rng: np.random.Generator, report: dict) -> None:
    f = 3
    cfg = AdaCofConfig(kernel_size=f, dilation=1)
    src = Tensor(rng.random((1, 2, 6, 6)), requires_grad=True)
    weights = nn.channel_softmax(
        Tensor(rng.standard_normal((1, f * f, 6, 6))))
    weights = Tensor(weights.data, requires_grad=True)
    alpha = Tensor(0.3 * rng.standard_normal((1, f * f, 6, 6)),
                   requires_grad=True)
    beta = Tensor(0.3 * rng.standard_normal((1, f * f, 6, 6)),
                  requires_grad=True)

    def warp(s, w, a, b2):
        # Probing raw weights breaks exact convexity, so the sum check is
        # off here; convexity of the starting point is still real.
        p = AdaCofParams(weights=w, alpha=a, beta=b2)
        return adacof_warp(s, p, cfg, check_weights=False).sum()

    report["adacof_source"] = finite_diff_check(
        lambda t: warp(t, weights, alpha, beta), src)
    report["adacof_weights"] = finite_diff_check(
        lambda t: warp(src, t, alpha, beta), weights)
    report["adacof_alpha"] = finite_diff_check(
        lambda t: warp(src, weights, t, beta), alpha)
    report["adacof_beta"] = finite_diff_check(
        lambda t: warp(src, weights, alpha, t), beta)


def _audit_losses(rng: np.random.Generator, report: dict) -> None:
    pred = Tensor(0.3 + 0.2 * rng.random((3, 5, 5)), requires_grad=True)
    gt = Tensor(0.6 + 0.2 * rng.random((3, 5, 5)))
    report["charbonnier"] = finite_diff_check(
        lambda t: charbonnier_loss(t, gt, epsilon=0.05), pred)
    fld = Tensor(rng.standard_normal((1, 4, 5, 5)), requires_grad=True)
    other = Tensor(rng.standard_normal((1, 4, 5, 5)))
    report["tv"] = finite_diff_check(
        lambda t: tv_loss(t, other, other, other, epsilon=0.05), fld)

    weights = LossWeights(epsilon=0.05)
    gt4 = Tensor(0.6 + 0.2 * rng.random((1, 3, 5, 5)))
    base = Tensor(0.2 + 0.2 * rng.random((1, 3, 5, 5)), requires_grad=True)
    offs = Tensor(rng.standard_normal((1, 4, 5, 5)), requires_grad=True)

    def total_of(image, alpha):
        direction = SimpleNamespace(alpha=alpha, beta=offs)
        outs = SimpleNamespace(i_final=image, params_fwd=direction,
                               params_bwd=direction)
        return total_loss(outs, gt4, weights, None)

    report["total_loss_image"] = finite_diff_check(
        lambda t: total_of(t, offs), base)
    report["total_loss_offsets"] = finite_diff_check(
        lambda t: total_of(base, t), offs)


def _audit_model(seed: int, report: dict) -> None:
    """End-to-end check on a deliberately tiny interpolator."""
    cfg = InterpConfig(encoder_widths=(4,), convs_per_level=1, kernel_size=3)
    spec = build_baseline_spec(cfg)
    params = init_model_params(spec, seed)
    rng = np.random.default_rng(seed)
    i0 = Tensor(rng.random((1, 3, 8, 8)))
    i1 = Tensor(rng.random((1, 3, 8, 8)))
    gt = Tensor(rng.random((1, 3, 8, 8)))
    weights = LossWeights(epsilon=0.05)

    worst = 0.0
    for name in spec.param_slots():
        name = name[0]
        base = params[name]

        def f(t, _name=name):
            trial = dict(params)
            trial[_name] = t
            out = baseline_forward(spec, trial, i0, i1, cfg)
            return total_loss(out, gt, weights, None)

        worst = max(worst, finite_diff_check(f, base))
    report["model_end_to_end"] = worst


def gradient_audit(seed: int = 0) -> dict[str, float]:
    """Max relative finite-difference error per audited operation."""
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    _audit_conv(rng, report)
    _audit_sampling(rng, report)
    _audit_warp(rng, report)
    _audit_losses(rng, report)
    _audit_model(seed, report)
    return report
