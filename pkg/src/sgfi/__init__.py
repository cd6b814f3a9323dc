"""Sparsity-guided compression toolkit for a toy frame-interpolation network.

The package is organized bottom-up:

``autodiff``
    reverse-mode engine on float64 numpy arrays (Tensor, Tape, backward,
    finite_diff_check).
``nn``
    array-level building blocks: conv2d via im2col, bilinear sampling,
    pooling, upsampling, channel concat/softmax, layer containers.
``adacof``
    adaptive-collaboration-of-flows warp operator, its literal reference
    oracle, and occlusion blending.
``optim``
    l1-sparsified training (proximal and orthant steps), AdaMax, density
    trajectory logging.
``arch`` / ``compress``
    architecture graphs, density profiling, layer reshaping and channel
    unification, model rebuilding.
``models`` / ``losses``
    baseline and enhanced interpolation networks plus their training loss.
``data`` / ``metrics`` / ``checkpoint``
    synthetic triplet generation, PSNR/SSIM, binary checkpoint container.
``pipeline`` / ``config`` / ``cli``
    the two-stage compression pipeline and its command-line surface.
"""

from sgfi.autodiff import Tensor, backward, finite_diff_check

__all__ = ["Tensor", "backward", "finite_diff_check"]
__version__ = "0.1.0"
