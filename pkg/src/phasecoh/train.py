"""Composite reconstruction loss, Adam with decoupled weight decay,
cosine learning-rate annealing, and the epoch loop.

The loss has three parts: mean squared error on magnitudes, a circular
1 - cos objective on phases (so wrap-around at +-pi costs nothing), and
a squared deviation between the coherence matrix re-estimated from the
reconstructed phase and the window's own coherence matrix. The weighted
total doubles as the window's anomaly score at inference time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .coherence import PciMatrix, pci_differentiable
from .model import (ModelConfig, ModelParams, forward_spectral, init_params,
                    save_checkpoint)
from .spectral import SpectralTensor, to_spectral_tensor
from .coherence import pci


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    """Weights of the magnitude / phase / coherence loss terms."""

    alpha: float = 1.0
    beta: float = 1.5
    gamma: float = 1.2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError(f"loss weights must be >= 0, got {self}")


@dataclass
class LossBreakdown:
    """Unweighted per-component losses plus the weighted total."""

    mag: float
    phase: float
    coh: float
    total: float

    def check(self, weights: LossWeights, tol: float = 1e-12) -> None:
        expect = (weights.alpha * self.mag + weights.beta * self.phase
                  + weights.gamma * self.coh)
        if abs(self.total - expect) > tol * max(1.0, abs(expect)):
            raise TrainingError(
                f"loss breakdown inconsistent: total {self.total} vs "
                f"recomputed {expect}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_size: int = 32
    lr: float = 5e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_min: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def loss_mag(mag_hat: ad.DiffTensor, mag: np.ndarray) -> ad.DiffTensor:
    """Mean squared error over all C*F magnitude entries."""
    mag = np.asarray(mag, dtype=np.float64)
    if mag_hat.shape != mag.shape:
        raise ad.ShapeError(
            f"loss_mag: shapes {mag_hat.shape} and {mag.shape} differ")
    diff = ad.sub(mag_hat, ad.constant(mag))
    return ad.reduce_mean(ad.mul(diff, diff))


def loss_phase(phase_hat: ad.DiffTensor, phase: np.ndarray) -> ad.DiffTensor:
    """Mean of 1 - cos(phase_hat - phase); bounded in [0, 2]."""
    phase = np.asarray(phase, dtype=np.float64)
    if phase_hat.shape != phase.shape:
        raise ad.ShapeError(
            f"loss_phase: shapes {phase_hat.shape} and {phase.shape} differ")
    diff = ad.sub(phase_hat, ad.constant(phase))
    ones = ad.constant(np.ones(phase.shape))
    return ad.reduce_mean(ad.sub(ones, ad.cos(diff)))


def loss_coh(phase_hat: ad.DiffTensor, adjacency: PciMatrix) -> ad.DiffTensor:
    """Mean squared deviation between the coherence matrix re-estimated
    from the reconstructed phase and the target matrix, diagonal included."""
    a = adjacency.values if isinstance(adjacency, PciMatrix) else np.asarray(adjacency)
    n_ch = phase_hat.shape[0]
    if a.shape != (n_ch, n_ch):
        raise ad.ShapeError(
            f"loss_coh: adjacency {a.shape} does not match phase {phase_hat.shape}")
    a_hat = pci_differentiable(phase_hat)
    diff = ad.sub(a_hat, ad.constant(a))
    return ad.reduce_mean(ad.mul(diff, diff))


def composite_loss(window, cfg: ModelConfig, params: ModelParams,
                   weights: LossWeights, cache=None):
    """Run the model on one window and evaluate the weighted loss against
    the window's own spectra and coherence matrix.

    Returns (LossBreakdown, total DiffTensor). ``cache`` may hold a
    precomputed (SpectralTensor, PciMatrix) pair for the window.
    """
    if cache is not None:
        spec, adjacency = cache
    else:
        spec = to_spectral_tensor(window, cfg.spectral())
        adjacency = pci(spec.phase)
    mag_hat, phase_hat = forward_spectral(spec, adjacency, cfg, params)
    l_mag = loss_mag(mag_hat, spec.magnitude)
    l_phase = loss_phase(phase_hat, spec.phase)
    l_coh = loss_coh(phase_hat, adjacency)
    total = ad.add(ad.add(ad.scale(l_mag, weights.alpha),
                          ad.scale(l_phase, weights.beta)),
                   ad.scale(l_coh, weights.gamma))
    breakdown = LossBreakdown(mag=float(l_mag.values), phase=float(l_phase.values),
                              coh=float(l_coh.values), total=float(total.values))
    return breakdown, total


def batch_loss(windows, cfg: ModelConfig, params: ModelParams,
               weights: LossWeights, caches=None):
    """Mean composite loss over a batch of windows (one shared graph)."""
    if not windows:
        raise TrainingError("empty batch")
    totals = []
    comp = np.zeros(3)
    for i, window in enumerate(windows):
        bd, total = composite_loss(window, cfg, params, weights,
                                   cache=None if caches is None else caches[i])
        totals.append(total)
        comp += (bd.mag, bd.phase, bd.coh)
    acc = totals[0]
    for t in totals[1:]:
        acc = ad.add(acc, t)
    mean_total = ad.scale(acc, 1.0 / len(windows))
    comp /= len(windows)
    return LossBreakdown(mag=comp[0], phase=comp[1], coh=comp[2],
                         total=float(mean_total.values)), mean_total


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

def init_adam_state(params: ModelParams) -> dict:
    return {"m": {n: np.zeros(t.shape) for n, t in params.items()},
            "v": {n: np.zeros(t.shape) for n, t in params.items()}}


def adam_step(params: ModelParams, grads: dict, state: dict, t: int,
              lr_t: float, cfg: TrainConfig) -> None:
    """One Adam update with bias correction, mutating params and state.

    Weight decay is decoupled: parameters shrink by lr_t * wd before the
    moment-based update. A non-finite gradient aborts the step.
    """
    if t < 1:
        raise TrainingError(f"Adam step counter must be >= 1, got {t}")
    for name in params.names():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name!r} at step {t}")
        p = params[name]
        if cfg.weight_decay:
            p.values *= 1.0 - lr_t * cfg.weight_decay
        m = state["m"][name]
        v = state["v"][name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        p.values -= lr_t * m_hat / (np.sqrt(v_hat) + cfg.eps)


def cosine_lr(epoch: int, total_epochs: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from lr0 toward lr_min over the epoch range."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr_min + (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------

def _precompute_caches(windows, cfg: ModelConfig):
    spectral_cfg = cfg.spectral()
    caches = []
    for w in windows:
        spec = to_spectral_tensor(w, spectral_cfg)
        caches.append((spec, pci(spec.phase)))
    return caches


def evaluate_loss(windows, cfg: ModelConfig, params: ModelParams,
                  weights: LossWeights, caches=None) -> LossBreakdown:
    """Mean LossBreakdown over a window set without touching parameters."""
    if caches is None:
        caches = _precompute_caches(windows, cfg)
    comp = np.zeros(4)
    for window, cache in zip(windows, caches):
        bd, _ = composite_loss(window, cfg, params, weights, cache=cache)
        comp += (bd.mag, bd.phase, bd.coh, bd.total)
    comp /= len(windows)
    return LossBreakdown(*comp)


def train_loop(train_windows, val_windows, cfg: ModelConfig,
               train_cfg: TrainConfig, weights: LossWeights,
               params: ModelParams | None = None, history_path=None,
               log=None):
    """Train on shuffled mini-batches with per-epoch cosine annealing.

    Records one history row per epoch (mean train breakdown plus the
    validation total) and retains the parameter snapshot with the best
    validation loss. Seeded shuffling makes runs bit-reproducible.
    """
    if not train_windows or not val_windows:
        raise TrainingError("train and validation sets must be non-empty")
    if params is None:
        params = init_params(cfg)
    rng = np.random.default_rng(train_cfg.seed)
    train_caches = _precompute_caches(train_windows, cfg)
    val_caches = _precompute_caches(val_windows, cfg)
    state = init_adam_state(params)
    history = []
    best = {"val_total": math.inf, "epoch": -1, "values": params.copy_values()}
    step = 0
    n = len(train_windows)
    for epoch in range(train_cfg.epochs):
        lr_t = cosine_lr(epoch, train_cfg.epochs, train_cfg.lr, train_cfg.lr_min)
        order = rng.permutation(n)
        comp = np.zeros(4)
        for lo in range(0, n, train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            params.zero_grad()
            bd, total = batch_loss([train_windows[i] for i in idx], cfg, params,
                                   weights, caches=[train_caches[i] for i in idx])
            if not math.isfinite(bd.total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {lo}")
            ad.backward(total)
            step += 1
            adam_step(params, {name: t.grad for name, t in params.items()},
                      state, step, lr_t, train_cfg)
            comp += np.array((bd.mag, bd.phase, bd.coh, bd.total)) * len(idx)
        comp /= n
        val = evaluate_loss(val_windows, cfg, params, weights, caches=val_caches)
        row = {"epoch": epoch, "lr": lr_t, "train_mag": comp[0],
               "train_phase": comp[1], "train_coh": comp[2],
               "train_total": comp[3], "val_total": val.total}
        history.append(row)
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr_t:.3e}  train {comp[3]:.5f}  "
                f"val {val.total:.5f}")
        if val.total < best["val_total"]:
            best = {"val_total": val.total, "epoch": epoch,
                    "values": params.copy_values()}
    params.load_values(best["values"])
    if history_path is not None:
        write_history(history_path, history)
    return params, history, best["epoch"]


HISTORY_COLUMNS = ("epoch", "lr", "train_mag", "train_phase", "train_coh",
                   "train_total", "val_total")


def write_history(path, history) -> None:
    """Write the training history CSV (full float precision via repr)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[c]))
                                              for c in HISTORY_COLUMNS[1:]])


def save_trained_checkpoint(path, params: ModelParams, cfg: ModelConfig,
                            extra_tensors=None, extra_config=None) -> None:
    """Checkpoint trained parameters together with the model config and
    any run artifacts that must travel with the weights (e.g. scaler)."""
    tensors = {name: t.values for name, t in params.items()}
    if extra_tensors:
        tensors.update(extra_tensors)
    config = {"model": cfg.to_dict()}
    if extra_config:
        config.update(extra_config)
    save_checkpoint(path, tensors, config)
