"""Finite-difference oracle for the analytic MLP gradients.

The oracle only ever calls `mlp_forward`; it never touches the backward code
it is checking. Errors are relative with an absolute floor: entries where
both gradients are below the floor are compared at the floor's scale, because
central differences carry ~1e-10 of roundoff noise that would otherwise be
amplified into meaningless ratios.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MlpParams, kaiming_init, mlp_backward_input, mlp_backward_params, mlp_forward
from .rng import Rng

REL_ERROR_FLOOR = 1e-3


def _loss(params: MlpParams, x: np.ndarray, upstream: np.ndarray) -> float:
    out, _ = mlp_forward(params, x)
    return float(np.sum(out * upstream))


def fd_param_grads(
    params: MlpParams, x: np.ndarray, upstream: np.ndarray, h: float = 1e-5
) -> list[np.ndarray]:
    """Central finite differences of sum(upstream * forward(x)) w.r.t. params."""
    grads = []
    flat = params.flat()
    for k, arr in enumerate(flat):
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = _loss(params, x, upstream)
            arr[idx] = orig - h
            down = _loss(params, x, upstream)
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
            it.iternext()
        grads.append(g)
    return grads


def fd_input_grad(
    params: MlpParams, x: np.ndarray, upstream: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central finite differences of sum(upstream * forward(x)) w.r.t. x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = _loss(params, x, upstream)
        x[idx] = orig - h
        down = _loss(params, x, upstream)
        x[idx] = orig
        g[idx] = (up - down) / (2.0 * h)
        it.iternext()
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max entrywise |a - n| / max(|a|, |n|, floor) over the pair of arrays."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERROR_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def has_relu_kink(params: MlpParams, x: np.ndarray, threshold: float = 1e-3) -> bool:
    """True if any relu pre-activation sits within `threshold` of zero.

    Near a kink the two-sided difference straddles the non-smooth point and
    disagrees with either one-sided derivative, so such probes are rejected
    rather than compared.
    """
    _, cache = mlp_forward(params, x)
    for layer, pre in zip(params.layers, cache.pre_activations):
        if layer.activation == "relu" and np.any(np.abs(pre) < threshold):
            return True
    return False


@dataclass
class GradcheckReport:
    probes: int
    max_rel_error: float
    tolerance: float
    kink_resamples: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def run_gradcheck(
    seed: int = 0,
    n_models: int = 20,
    probes_per_model: int = 5,
    h: float = 1e-5,
    tolerance: float = 1e-5,
    kink_threshold: float = 1e-3,
    _corrupt: bool = False,
) -> GradcheckReport:
    """Compare analytic gradients against central differences on random nets.

    Draws `n_models` small MLPs of depth 1 to 3 with mixed activations, checks
    `probes_per_model` random input batches on each (both parameter and input
    gradients), and reports the worst relative error seen. Probes that land
    within `kink_threshold` of a relu kink are redrawn.

    `_corrupt` perturbs the analytic gradients before comparison; it exists so
    the oracle's own failure path can be exercised.
    """
    rng = Rng(seed)
    max_err = 0.0
    probes = 0
    resamples = 0
    for m in range(n_models):
        mrng = rng.child(m)
        depth = 1 + m % 3
        dims = [int(d) for d in mrng.child(0).integers(2, 7, size=depth + 1)]
        hidden = ("relu", "identity")[m % 2]
        params = kaiming_init(mrng.child(1), dims, hidden_activation=hidden)
        prng = mrng.child(2)
        for _ in range(probes_per_model):
            for _attempt in range(50):
                x = prng.gaussian((3, dims[0]))
                if not has_relu_kink(params, x, kink_threshold):
                    break
                resamples += 1
            upstream = prng.gaussian((3, dims[-1]))
            out_grads = mlp_backward_params(params, mlp_forward(params, x)[1], upstream)
            in_grad = mlp_backward_input(params, mlp_forward(params, x)[1], upstream)
            if _corrupt:
                out_grads = [g + 1e-3 * (np.abs(g) + 1.0) for g in out_grads]
                in_grad = in_grad + 1e-3 * (np.abs(in_grad) + 1.0)
            fd_p = fd_param_grads(params, x, upstream, h)
            fd_x = fd_input_grad(params, x, upstream, h)
            for a, n in zip(out_grads, fd_p):
                max_err = max(max_err, relative_error(a, n))
            max_err = max(max_err, relative_error(in_grad, fd_x))
            probes += 1
    return GradcheckReport(
        probes=probes,
        max_rel_error=max_err,
        tolerance=tolerance,
        kink_resamples=resamples,
    )
