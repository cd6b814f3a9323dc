"""Training objective for the interpolation models.

total = charbonnier(I_out, I_gt)
      + lambda_feat * || phi(I_out) - phi(I_gt) ||_2      (optional)
      + lambda_tv   * sum of smoothness terms over the four offset fields

The Charbonnier penalty rho(x) = sqrt(x^2 + eps^2) is applied
elementwise and mean-reduced.  The smoothness term tau(field) takes one
mean over the union of all horizontal and vertical neighbour
differences passed through rho, so a constant field scores exactly eps
and the four offset fields of a perfect warp contribute 4*eps.

The feature term is a pluggable stand-in for a pretrained perceptual
network: a small fixed random conv stack whose parameters never train.
It is disabled by default and the total loss is well-defined without it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sgfi import autodiff as ad
from sgfi import nn
from sgfi.autodiff import ShapeError, Tensor


@dataclass(frozen=True)
class LossWeights:
    epsilon: float = 0.001
    lambda_tv: float = 0.01
    lambda_feat: float = 0.005

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def _charbonnier_map(t: Tensor, epsilon: float) -> Tensor:
    return ad.sqrt(ad.add(ad.mul(t, t), epsilon * epsilon))


def charbonnier_loss(pred: Tensor, target: Tensor,
                     epsilon: float = 0.001) -> Tensor:
    """Mean Charbonnier penalty of the prediction error."""
    if pred.shape != target.shape:
        raise ShapeError(f"charbonnier_loss: shapes {pred.shape} and "
                         f"{target.shape} differ")
    return ad.reduce_mean(_charbonnier_map(ad.sub(pred, target), epsilon))


def _smoothness(field: Tensor, epsilon: float) -> Tensor:
    """One mean over every horizontal and vertical neighbour difference."""
    dh = ad.sub(field[..., :, 1:], field[..., :, :-1])
    dv = ad.sub(field[..., 1:, :], field[..., :-1, :])
    total = ad.add(ad.reduce_sum(_charbonnier_map(dh, epsilon)),
                   ad.reduce_sum(_charbonnier_map(dv, epsilon)))
    return ad.mul(total, 1.0 / (dh.size + dv.size))


def tv_loss(alpha1: Tensor, alpha2: Tensor, beta1: Tensor, beta2: Tensor,
            epsilon: float = 0.001) -> Tensor:
    """Summed smoothness of the four offset fields."""
    acc = _smoothness(alpha1, epsilon)
    for f in (alpha2, beta1, beta2):
        acc = ad.add(acc, _smoothness(f, epsilon))
    return acc


class FeatureLossPlugin:
    """Fixed random feature extractor standing in for a perceptual net.

    Two 3x3 conv layers with relu, parameters frozen at construction.
    ``enabled`` gates the term; a disabled plugin contributes nothing.
    """

    def __init__(self, layers: list[nn.Conv2dLayer], enabled: bool = False):
        self.layers = layers
        self.enabled = enabled
        for layer in layers:
            layer.weights.requires_grad = False
            layer.bias.requires_grad = False

    @classmethod
    def create(cls, seed: int = 0, in_channels: int = 3, width: int = 8,
               enabled: bool = False) -> "FeatureLossPlugin":
        rng = np.random.default_rng(seed)
        return cls([nn.Conv2dLayer.init(in_channels, width, 3, rng),
                    nn.Conv2dLayer.init(width, width, 3, rng)], enabled)

    def features(self, img: Tensor) -> Tensor:
        t = img
        for i, layer in enumerate(self.layers):
            t = nn.conv2d(t, layer)
            if i + 1 < len(self.layers):
                t = ad.relu(t)
        return t


def feature_loss(pred: Tensor, target: Tensor,
                 plugin: FeatureLossPlugin) -> Tensor:
    """L2 norm of the feature-map difference."""
    diff = ad.sub(plugin.features(pred), plugin.features(target))
    return ad.sqrt(ad.reduce_sum(ad.mul(diff, diff)))


def total_loss(outputs, target: Tensor, weights: LossWeights | None = None,
               plugin: FeatureLossPlugin | None = None) -> Tensor:
    """Full training objective for a model's forward outputs.

    ``outputs`` carries ``i_final`` plus the two warp parameter sets
    (``params_fwd`` and ``params_bwd``) whose offset fields feed the
    smoothness term.
    """
    w = weights or LossWeights()
    loss = charbonnier_loss(outputs.i_final, target, w.epsilon)
    if plugin is not None and plugin.enabled:
        loss = ad.add(loss, ad.mul(feature_loss(outputs.i_final, target,
                                                plugin), w.lambda_feat))
    tv = tv_loss(outputs.params_fwd.alpha, outputs.params_bwd.alpha,
                 outputs.params_fwd.beta, outputs.params_bwd.beta, w.epsilon)
    return ad.add(loss, ad.mul(tv, w.lambda_tv))
