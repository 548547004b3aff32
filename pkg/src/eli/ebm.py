"""Energy network over latent vectors: scoring, sampling, contrastive training.

The model is a small MLP with one output unit. Training pushes the energy of
latents from the earlier feature extractor down and the energy of short-run
sampled negatives up; negatives start at the current (drifted) extractor's
latents and take a handful of noisy gradient steps on the energy surface.
Sampling is treated as a fixed generator: no gradient flows back through the
chain into the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ACTIVATIONS, MlpParams, NumericError, ShapeError, kaiming_init, mlp_backward_input, mlp_backward_params, mlp_forward
from .optim import EmaState, ema_init, ema_update, rmsprop_init, rmsprop_step
from .rng import Rng

LOSS_SIGNS = ("contrastive", "literal")


@dataclass
class LatentBatch:
    """Latent vectors plus bookkeeping about where they came from.

    `origin` is free-form (for example "pre_drift" / "post_drift"); this
    module never branches on it.
    """

    latents: np.ndarray
    origin: str | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        if self.latents.ndim != 2:
            raise ShapeError(f"latents must be [batch, dim], got shape {self.latents.shape}")


@dataclass
class LangevinConfig:
    """Short-run sampler settings.

    Each step moves against half the step size times the energy gradient and,
    when noise is enabled, adds sqrt(step_size)-scaled Gaussian noise. The
    gradient (not the position) is clamped entrywise to +-grad_clip when set,
    which keeps early, badly-scaled energy surfaces from flinging samples
    away.
    """

    steps: int = 30
    step_size: float = 0.1
    noise_enabled: bool = True
    grad_clip: float | None = 0.03

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError(f"grad_clip must be positive or None, got {self.grad_clip}")


@dataclass
class EbmTrainConfig:
    """Contrastive training settings for the energy network.

    The network is an MLP with a single output unit read through
    `final_activation`. The softplus default floors the energy at zero, so
    descent on the learned surface flattens out once a latent reaches the
    low-energy region instead of sliding forever into extrapolated terrain.
    """

    iterations: int = 1500
    batch_size: int = 128
    learning_rate: float = 1e-4
    hidden_dims: tuple[int, ...] = (64, 64)
    hidden_activation: str = "relu"
    final_activation: str = "softplus"
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    ema_decay: float = 0.999
    energy_reg_coeff: float = 0.1
    loss_sign: str = "contrastive"
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.loss_sign not in LOSS_SIGNS:
            raise ValueError(f"loss_sign must be one of {LOSS_SIGNS}, got {self.loss_sign!r}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if self.energy_reg_coeff < 0:
            raise ValueError(f"energy_reg_coeff must be >= 0, got {self.energy_reg_coeff}")
        for which in (self.hidden_activation, self.final_activation):
            if which not in ACTIVATIONS:
                raise ValueError(f"activation must be one of {ACTIVATIONS}, got {which!r}")
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)


@dataclass
class EnergyModel:
    """Trained energy network plus its EMA shadow."""

    net: MlpParams
    ema: EmaState

    def params_for(self, use_ema: bool) -> MlpParams:
        return self.ema.shadow if use_ema else self.net

    def energy_and_grad(self, z: np.ndarray, use_ema: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Energies [batch] and their gradients w.r.t. z, [batch, dim]."""
        params = self.params_for(use_ema)
        out, cache = mlp_forward(params, z)
        grad = mlp_backward_input(params, cache, np.ones_like(out))
        return out[:, 0], grad


def energy(model: EnergyModel, z: np.ndarray, use_ema: bool = False) -> np.ndarray:
    """Scalar energy per row of z, shape [batch]."""
    out, _ = mlp_forward(model.params_for(use_ema), z)
    return out[:, 0]


@dataclass
class QuadraticEnergy:
    """Closed-form energy scale/2 * ||z||^2; exists for exactness tests.

    Anything exposing energy_and_grad(z, use_ema) can drive the sampler and
    the aligner, and this surface has analytically known dynamics.
    """

    scale: float = 1.0

    def energy_and_grad(self, z: np.ndarray, use_ema: bool = False) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=np.float64)
        return 0.5 * self.scale * np.sum(z * z, axis=1), self.scale * np.array(z)


def langevin_sample(
    model,
    z0: np.ndarray,
    cfg: LangevinConfig,
    rng: Rng,
    use_ema: bool = False,
) -> np.ndarray:
    """Short-run sampler: walk z0 downhill on the energy with injected noise.

    Per step: z <- z - (step_size / 2) * grad + sqrt(step_size) * noise.
    `model` is anything with energy_and_grad. z0 is never mutated. With
    noise_enabled=False this is plain clipped gradient descent (at half the
    step size an aligner with equal learning rate would take).
    """
    z = np.array(z0, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"z0 must be [batch, dim], got shape {z.shape}")
    half = 0.5 * cfg.step_size
    noise_scale = np.sqrt(cfg.step_size)
    for step in range(cfg.steps):
        e, grad = model.energy_and_grad(z, use_ema)
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(grad))):
            raise NumericError(f"langevin_sample: non-finite energy or gradient at step {step}")
        if cfg.grad_clip is not None:
            grad = np.clip(grad, -cfg.grad_clip, cfg.grad_clip)
        z = z - half * grad
        if cfg.noise_enabled:
            z = z + noise_scale * rng.gaussian(z.shape)
    return z


def init_energy_model(dim: int, cfg: EbmTrainConfig, rng: Rng) -> EnergyModel:
    """Untrained model for `dim`-dimensional latents (EMA shadow = net)."""
    net = kaiming_init(
        rng,
        [int(dim), *cfg.hidden_dims, 1],
        hidden_activation=cfg.hidden_activation,
        final_activation=cfg.final_activation,
    )
    if cfg.final_activation == "softplus":
        # Start the head in the responsive region of the floor activation.
        # With a zero bias the initial energies sit just above the floor,
        # where the softplus derivative is tiny; on unlucky draws training
        # then pushes both energy terms into the flat zone and the net dies
        # before it can order the two latent clouds.
        net.layers[-1].bias[:] = 1.0
    return EnergyModel(net=net, ema=ema_init(net, cfg.ema_decay))


def _take_batch(it, which: str, iteration: int) -> np.ndarray:
    try:
        batch = next(it)
    except StopIteration:
        raise ValueError(
            f"{which} latent stream exhausted at iteration {iteration}; "
            "training streams must yield one batch per iteration"
        ) from None
    z = np.asarray(batch, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ShapeError(f"{which} batch at iteration {iteration} must be [batch, dim], got {z.shape}")
    return z


def learn_ebm(prev_latents, curr_latents, cfg: EbmTrainConfig, rng: Rng) -> EnergyModel:
    """Fit the energy network contrastively from two synchronized batch streams.

    `prev_latents` yields batches from the earlier extractor (targets of low
    energy), `curr_latents` batches from the current one (negative starting
    points). Per iteration: sample negatives by short-run noisy descent from
    the current batch, then take one RMSprop step on

        sign_in * mean E(prev) + sign_out * mean E(negatives)
        + reg * (mean E(prev)^2 + mean E(negatives)^2)

    with (sign_in, sign_out) = (+1, -1) for the default "contrastive" loss,
    flipped for "literal". The regularizer keeps both energy means pinned
    near a fixed scale instead of drifting without bound. Negatives are
    constants in this loss: the sampler's chain is never differentiated
    through. The EMA shadow is refreshed after every step.

    Before the first step the sign of the output layer is chosen so the
    untrained net starts on the favorable side of the loss; the inline note
    below explains why a backwards start is dangerous with a floored final
    activation.
    """
    prev_it = iter(prev_latents)
    curr_it = iter(curr_latents)
    sign_in, sign_out = (1.0, -1.0) if cfg.loss_sign == "contrastive" else (-1.0, 1.0)
    reg = cfg.energy_reg_coeff

    first_prev = _take_batch(prev_it, "prev", 0)
    first_curr = _take_batch(curr_it, "curr", 0)
    dim = first_prev.shape[1]
    model = init_energy_model(dim, cfg, rng.child(0))

    # Which cloud a fresh random head scores lower is a coin flip. When the
    # ordering starts backwards the objective first has to drag both energy
    # means through zero contrast before it can separate them, and with a
    # floored final activation that passage can park both clouds in the flat
    # region, where gradients vanish and training never recovers. Negating
    # the output layer reverses the ordering, so score both signs on the
    # first batch pair and keep the one the loss favors.
    flipped_net = model.net.copy()
    flipped_net.layers[-1].weight *= -1.0
    flipped = EnergyModel(net=flipped_net, ema=ema_init(flipped_net, cfg.ema_decay))

    def _start_loss(m: EnergyModel) -> float:
        return float(
            sign_in * energy(m, first_prev).mean() + sign_out * energy(m, first_curr).mean()
        )

    if _start_loss(flipped) < _start_loss(model):
        model = flipped

    train_rng = rng.child(1)
    opt = rmsprop_init(
        model.net, cfg.learning_rate, decay=cfg.rmsprop_decay, epsilon=cfg.rmsprop_epsilon
    )

    for it in range(cfg.iterations):
        if it == 0:
            z_prev, z_curr = first_prev, first_curr
        else:
            z_prev = _take_batch(prev_it, "prev", it)
            z_curr = _take_batch(curr_it, "curr", it)
        if z_prev.shape[1] != dim or z_curr.shape[1] != dim:
            raise ShapeError(
                f"iteration {it}: stream latent dim changed "
                f"(model expects {dim}, got prev {z_prev.shape[1]} / curr {z_curr.shape[1]})"
            )

        z_neg = langevin_sample(model, z_curr, cfg.langevin, train_rng.child(it))

        out_prev, cache_prev = mlp_forward(model.net, z_prev)
        out_neg, cache_neg = mlp_forward(model.net, z_neg)
        e_prev = out_prev[:, 0]
        e_neg = out_neg[:, 0]
        loss = (
            sign_in * e_prev.mean()
            + sign_out * e_neg.mean()
            + reg * (np.mean(e_prev**2) + np.mean(e_neg**2))
        )
        if not np.isfinite(loss):
            raise NumericError(f"learn_ebm: non-finite loss at iteration {it}")

        up_prev = (sign_in + 2.0 * reg * e_prev)[:, None] / e_prev.shape[0]
        up_neg = (sign_out + 2.0 * reg * e_neg)[:, None] / e_neg.shape[0]
        grads_prev = mlp_backward_params(model.net, cache_prev, up_prev)
        grads_neg = mlp_backward_params(model.net, cache_neg, up_neg)
        grads = [a + b for a, b in zip(grads_prev, grads_neg)]

        net, opt = rmsprop_step(model.net, grads, opt)
        model = EnergyModel(net=net, ema=ema_update(model.ema, net))
    return model
