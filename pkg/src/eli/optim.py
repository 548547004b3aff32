"""Optimizers over MlpParams: RMSprop, momentum SGD, and an EMA shadow.

All steps are pure: they return new parameter/state objects and never mutate
their arguments, which is what makes checkpoint round-trips and repeat-call
determinism bitwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MlpParams, NumericError, ShapeError


def _check_grads(params: MlpParams, grads: list[np.ndarray]) -> None:
    flat = params.flat()
    if len(grads) != len(flat):
        raise ShapeError(f"expected {len(flat)} gradient arrays, got {len(grads)}")
    for i, (p, g) in enumerate(zip(flat, grads)):
        if p.shape != g.shape:
            raise ShapeError(
                f"gradient array {i} has shape {g.shape}, parameter has {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"gradient array {i} contains non-finite values")


@dataclass
class RmsPropState:
    learning_rate: float
    decay: float
    epsilon: float
    square_avg: list[np.ndarray]


def rmsprop_init(
    params: MlpParams,
    learning_rate: float,
    decay: float = 0.99,
    epsilon: float = 1e-8,
) -> RmsPropState:
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"decay must be in [0, 1), got {decay}")
    return RmsPropState(
        learning_rate=learning_rate,
        decay=decay,
        epsilon=epsilon,
        square_avg=[np.zeros_like(p) for p in params.flat()],
    )


def rmsprop_step(
    params: MlpParams, grads: list[np.ndarray], state: RmsPropState
) -> tuple[MlpParams, RmsPropState]:
    """One RMSprop update.

    square_avg <- decay * square_avg + (1 - decay) * grad^2
    param      <- param - lr * grad / (sqrt(square_avg) + epsilon)

    The denominator uses the updated average; epsilon sits outside the root.
    """
    _check_grads(params, grads)
    new_sq: list[np.ndarray] = []
    new_flat: list[np.ndarray] = []
    for p, g, sq in zip(params.flat(), grads, state.square_avg):
        sq2 = state.decay * sq + (1.0 - state.decay) * g * g
        new_sq.append(sq2)
        new_flat.append(p - state.learning_rate * g / (np.sqrt(sq2) + state.epsilon))
    return params.with_flat(new_flat), RmsPropState(
        state.learning_rate, state.decay, state.epsilon, new_sq
    )


@dataclass
class MomentumState:
    learning_rate: float
    momentum: float
    velocity: list[np.ndarray]


def momentum_init(
    params: MlpParams, learning_rate: float, momentum: float = 0.9
) -> MomentumState:
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    return MomentumState(
        learning_rate=learning_rate,
        momentum=momentum,
        velocity=[np.zeros_like(p) for p in params.flat()],
    )


def momentum_step(
    params: MlpParams, grads: list[np.ndarray], state: MomentumState
) -> tuple[MlpParams, MomentumState]:
    """Heavy-ball SGD: v <- momentum * v + grad; param <- param - lr * v."""
    _check_grads(params, grads)
    new_v: list[np.ndarray] = []
    new_flat: list[np.ndarray] = []
    for p, g, v in zip(params.flat(), grads, state.velocity):
        v2 = state.momentum * v + g
        new_v.append(v2)
        new_flat.append(p - state.learning_rate * v2)
    return params.with_flat(new_flat), MomentumState(
        state.learning_rate, state.momentum, new_v
    )


@dataclass
class EmaState:
    """Exponential moving average of parameters ("shadow" copy)."""

    decay: float
    shadow: MlpParams


def ema_init(params: MlpParams, decay: float) -> EmaState:
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must be in [0, 1], got {decay}")
    return EmaState(decay=decay, shadow=params.copy())


def ema_update(state: EmaState, current: MlpParams) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * current.

    decay 0 tracks `current` exactly; decay 1 freezes the shadow.
    """
    shadow_flat = state.shadow.flat()
    current_flat = current.flat()
    if len(shadow_flat) != len(current_flat):
        raise ShapeError("EMA shadow and current parameters have different layer counts")
    new_flat = []
    for s, c in zip(shadow_flat, current_flat):
        if s.shape != c.shape:
            raise ShapeError(
                f"EMA shadow shape {s.shape} does not match current {c.shape}"
            )
        new_flat.append(state.decay * s + (1.0 - state.decay) * c)
    return EmaState(decay=state.decay, shadow=state.shadow.with_flat(new_flat))
