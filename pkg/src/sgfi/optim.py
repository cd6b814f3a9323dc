"""Optimizers for the two training regimes.

Sparsified training minimizes f(theta) + l1_weight * ||theta||_1 with two
alternating step kinds:

* P-step: SGD on f followed by the l1 proximal map (soft-threshold with
  tau = lr * l1_weight), so small coordinates land exactly on zero.
* O-step: support-respecting descent.  Coordinates already at zero stay
  frozen; the rest move along the pseudo-gradient of the full objective
  (grad f + l1_weight * sign(theta)) and any coordinate whose trial
  value crosses zero is projected to exactly zero.

The penalty applies to weight tensors only (names ending ".weight");
biases take plain SGD inside both step kinds.

Dense (re)training uses AdaMax, the infinity-norm member of the Adam
family, with bias-corrected first moment.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from sgfi.autodiff import Tensor, backward, zero_grads


class StepRejected(RuntimeError):
    """A step produced a non-finite gradient and was not applied."""


def prox_l1(values: np.ndarray, threshold: float) -> np.ndarray:
    """Soft-threshold: shrink toward zero by ``threshold``, clip to zero."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def default_prunable(params: dict[str, Tensor]) -> frozenset[str]:
    return frozenset(n for n in params if n.endswith(".weight"))


@dataclass
class SparsifyProblem:
    """The objective being sparsified.

    ``loss_fn`` maps a batch (opaque to the optimizer) to a scalar loss
    tensor built from ``params``.  ``prunable`` names the tensors under
    the l1 penalty; by default every ".weight" tensor.
    """

    params: dict[str, Tensor]
    loss_fn: Callable[[object], Tensor]
    l1_weight: float
    prunable: frozenset[str] | None = None

    def __post_init__(self):
        if self.l1_weight < 0:
            raise ValueError(f"l1_weight must be >= 0, got {self.l1_weight}")
        if self.prunable is None:
            self.prunable = default_prunable(self.params)
        unknown = self.prunable - set(self.params)
        if unknown:
            raise ValueError(f"prunable names not in params: {sorted(unknown)}")


def _batch_gradients(problem: SparsifyProblem, batch) -> float:
    leaves = list(problem.params.values())
    zero_grads(leaves)
    loss = problem.loss_fn(batch)
    backward(loss, leaves=leaves)
    for name, t in problem.params.items():
        if not np.all(np.isfinite(t.grad)):
            raise StepRejected(f"non-finite gradient in {name!r}")
    return loss.item()


def p_step(problem: SparsifyProblem, batch, lr: float) -> float:
    """Proximal step: SGD on f, then soft-threshold prunable tensors."""
    loss = _batch_gradients(problem, batch)
    tau = lr * problem.l1_weight
    for name, t in problem.params.items():
        stepped = t.data - lr * t.grad
        t.data = prox_l1(stepped, tau) if name in problem.prunable else stepped
    return loss


def o_step(problem: SparsifyProblem, batch, lr: float) -> float:
    """Orthant step: freeze zeros, project sign changes to exactly zero."""
    loss = _batch_gradients(problem, batch)
    lam = problem.l1_weight
    for name, t in problem.params.items():
        if name not in problem.prunable:
            t.data = t.data - lr * t.grad
            continue
        theta = t.data
        sign = np.sign(theta)
        trial = theta - lr * (t.grad + lam * sign)
        keep = (sign != 0.0) & (np.sign(trial) == sign)
        t.data = np.where(keep, trial, 0.0)
    return loss


def weight_density(params: dict[str, Tensor],
                   prunable: Iterable[str] | None = None) -> float:
    """Fraction of exactly nonzero entries across the prunable tensors."""
    names = default_prunable(params) if prunable is None else prunable
    total = nnz = 0
    for n in names:
        d = params[n].data
        total += d.size
        nnz += int(np.count_nonzero(d))
    if total == 0:
        raise ValueError("no prunable parameters to measure")
    return nnz / total


def lr_schedule(initial_lr: float, epoch: int, halve_every: int) -> float:
    """Step decay: halve the rate after every ``halve_every`` epochs."""
    if initial_lr <= 0:
        raise ValueError(f"initial_lr must be > 0, got {initial_lr}")
    if halve_every < 1:
        raise ValueError(f"halve_every must be >= 1, got {halve_every}")
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return initial_lr * 0.5 ** (epoch // halve_every)


@dataclass
class ObproxSchedule:
    """Epoch plan for sparsified training.

    The first ``p_step_epochs`` epochs use P-steps, the rest O-steps; the
    default split is half and half (rounded up).  ``lr_halve_every``
    applies the step decay; None keeps the rate constant.
    """

    total_epochs: int
    p_step_epochs: int | None = None
    lr: float = 0.001
    lr_halve_every: int | None = None
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.p_step_epochs is None:
            self.p_step_epochs = (self.total_epochs + 1) // 2
        if not 0 <= self.p_step_epochs <= self.total_epochs:
            raise ValueError(f"p_step_epochs {self.p_step_epochs} outside "
                             f"[0, {self.total_epochs}]")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochRecord:
    epoch: int                      # 1-based
    density: float
    loss: float                     # mean data term over the epoch's batches
    psnr: float | None = None
    flagged_batches: list[int] = field(default_factory=list)


class DensityTrajectory:
    """Per-epoch log of the sparsification run, serializable as CSV
    with columns epoch,density,loss,psnr at six significant digits."""

    def __init__(self, records: list[EpochRecord] | None = None):
        self.records = records or []

    def add(self, record: EpochRecord) -> None:
        self.records.append(record)

    def densities(self) -> list[float]:
        return [r.density for r in self.records]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,density,loss,psnr\n")
        for r in self.records:
            psnr = "nan" if r.psnr is None else f"{r.psnr:.6g}"
            buf.write(f"{r.epoch},{r.density:.6g},{r.loss:.6g},{psnr}\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv_text())


def sparsify(problem: SparsifyProblem, schedule: ObproxSchedule,
             dataset: Sequence, eval_fn: Callable[[dict], float] | None = None
             ) -> DensityTrajectory:
    """Run the full P-then-O schedule over ``dataset``.

    Batches are drawn in a seeded shuffle each epoch.  A batch whose
    gradient is non-finite is skipped and flagged in the epoch record.
    Parameters are updated in place; the trajectory is returned.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    trajectory = DensityTrajectory()
    n = len(dataset)
    bs = schedule.batch_size
    for epoch in range(schedule.total_epochs):
        lr = schedule.lr if schedule.lr_halve_every is None else \
            lr_schedule(schedule.lr, epoch, schedule.lr_halve_every)
        step = p_step if epoch < schedule.p_step_epochs else o_step
        order = np.random.default_rng([schedule.seed, epoch]).permutation(n)
        losses: list[float] = []
        flagged: list[int] = []
        for bi, start in enumerate(range(0, n, bs)):
            batch = [dataset[i] for i in order[start:start + bs]]
            try:
                losses.append(step(problem, batch, lr))
            except StepRejected:
                flagged.append(bi)
        density = weight_density(problem.params, problem.prunable)
        psnr = eval_fn(problem.params) if eval_fn is not None else None
        trajectory.add(EpochRecord(epoch + 1, density,
                                   float(np.mean(losses)) if losses else float("nan"),
                                   psnr, flagged))
    return trajectory


@dataclass
class AdaMaxState:
    """Moment estimates for AdaMax; lazily sized per parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-12
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    u: dict[str, np.ndarray] = field(default_factory=dict)


def adamax_step(state: AdaMaxState, params: dict[str, Tensor],
                lr: float) -> None:
    """One update from the gradients currently held in ``params``.

    m <- b1*m + (1-b1)*g ; u <- max(b2*u, |g|) ;
    theta <- theta - lr/(1-b1^t) * m/(u+eps).
    """
    state.t += 1
    correction = 1.0 - state.beta1 ** state.t
    for name, tns in params.items():
        g = tns.grad
        if g is None:
            g = np.zeros_like(tns.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(tns.data)
            state.u[name] = np.zeros_like(tns.data)
        u = state.u[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * u, np.abs(g), out=u)
        tns.data = tns.data - (lr / correction) * m / (u + state.eps)
