"""Realign drifted latents by deterministic descent on a learned energy surface.

Alignment is the noise-free counterpart of the training-time sampler: each of
`l_steps` updates moves a latent by the full learning rate times the energy
gradient (the sampler moves by half its step size and adds noise), with no
gradient clipping. At a stationary point of the energy the update is exactly
the identity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import NumericError, ShapeError

ALIGN_SPACES = ("latent", "logit")


@dataclass
class AlignConfig:
    l_steps: int = 30
    learning_rate: float = 0.01
    use_ema: bool = True
    space: str = "latent"

    def __post_init__(self):
        if self.l_steps < 0:
            raise ValueError(f"l_steps must be >= 0, got {self.l_steps}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.space not in ALIGN_SPACES:
            raise ValueError(f"space must be one of {ALIGN_SPACES}, got {self.space!r}")


def _check_grad(grad: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad).all(axis=1))[0])
        raise NumericError(f"alignment step {step}: non-finite energy gradient at row {bad}")


def _descend(model, z: np.ndarray, cfg: AlignConfig, keep_snapshots: bool):
    z = np.array(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"latents must be [batch, dim], got shape {z.shape}")
    trace = np.empty((z.shape[0], cfg.l_steps + 1), dtype=np.float64)
    snapshots: list[np.ndarray] = []
    e, grad = model.energy_and_grad(z, cfg.use_ema)
    trace[:, 0] = e
    for step in range(cfg.l_steps):
        _check_grad(grad, step)
        z = z - cfg.learning_rate * grad
        if keep_snapshots:
            snapshots.append(z.copy())
        e, grad = model.energy_and_grad(z, cfg.use_ema)
        trace[:, step + 1] = e
    return z, trace, snapshots


def align_latents(model, z: np.ndarray, cfg: AlignConfig) -> np.ndarray:
    """Descend each row of z for cfg.l_steps; returns the moved batch.

    z is never mutated; l_steps = 0 returns an identical copy. `model` is
    anything with energy_and_grad(z, use_ema).
    """
    aligned, _, _ = _descend(model, z, cfg, keep_snapshots=False)
    return aligned


def align_energy_trace(model, z: np.ndarray, cfg: AlignConfig) -> tuple[np.ndarray, np.ndarray]:
    """Like align_latents but also returns per-row energies along the path.

    The trace has l_steps + 1 columns: column 0 is the energy before any
    update, column k the energy after step k.
    """
    aligned, trace, _ = _descend(model, z, cfg, keep_snapshots=False)
    return aligned, trace


def align_snapshots(
    model, z: np.ndarray, cfg: AlignConfig
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Aligned batch, energy trace, and the batch after every single step.

    Snapshots hold l_steps arrays (the state after steps 1..l_steps), each a
    copy, so callers can study per-dimension movement.
    """
    aligned, trace, snaps = _descend(model, z, cfg, keep_snapshots=True)
    return aligned, trace, snaps


def per_dimension_delta(z_before: np.ndarray, z_steps: list[np.ndarray]) -> np.ndarray:
    """Mean movement of each latent dimension at each step.

    Returns [dim, len(z_steps)]: column i holds the batch-mean of
    (z_steps[i] - z_before) per dimension. Identical snapshots give zeros.
    """
    z_before = np.asarray(z_before, dtype=np.float64)
    if z_before.ndim != 2:
        raise ShapeError(f"z_before must be [batch, dim], got shape {z_before.shape}")
    out = np.empty((z_before.shape[1], len(z_steps)), dtype=np.float64)
    for i, z_i in enumerate(z_steps):
        z_i = np.asarray(z_i, dtype=np.float64)
        if z_i.shape != z_before.shape:
            raise ShapeError(
                f"snapshot {i} has shape {z_i.shape}, expected {z_before.shape}"
            )
        out[:, i] = (z_i - z_before).mean(axis=0)
    return out
