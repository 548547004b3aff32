import numpy as np
import pytest

from eli.ebm import (
    EbmTrainConfig,
    EnergyModel,
    LangevinConfig,
    LatentBatch,
    QuadraticEnergy,
    energy,
    init_energy_model,
    langevin_sample,
    learn_ebm,
)
from eli.nn import Layer, MlpParams, NumericError, ShapeError
from eli.optim import ema_init
from eli.rng import Rng


def linear_energy(w, b):
    net = MlpParams([Layer(np.array([w], float), np.array([b], float), "identity")])
    return EnergyModel(net=net, ema=ema_init(net, 0.999))


def zero_energy(dim):
    net = MlpParams([Layer(np.zeros((1, dim)), np.zeros(1), "identity")])
    return EnergyModel(net=net, ema=ema_init(net, 0.999))


class BrokenEnergy:
    def energy_and_grad(self, z, use_ema=False):
        z = np.asarray(z, float)
        return np.full(z.shape[0], np.nan), np.full_like(z, np.nan)


def cluster_streams(rng, dim, offset, batch, n_batches):
    """Two infinite-ish streams of gaussian clusters `offset` apart."""
    prev = [rng.child(2 * i).gaussian((batch, dim)) for i in range(n_batches)]
    curr = [rng.child(2 * i + 1).gaussian((batch, dim)) + offset for i in range(n_batches)]
    return prev, curr


def test_latent_batch_validates_rank():
    with pytest.raises(ShapeError):
        LatentBatch(np.zeros(5))
    lb = LatentBatch(np.zeros((5, 3)), origin="pre_drift")
    assert lb.latents.shape == (5, 3) and lb.origin == "pre_drift"


def test_energy_zero_network_is_zero():
    model = zero_energy(4)
    assert np.array_equal(energy(model, np.ones((3, 4))), np.zeros(3))


def test_energy_linear_hand_case():
    # E(z) = w . z + b with w = [3, -1], b = 0.5 at z = [1, 2] -> 1.5
    model = linear_energy([3.0, -1.0], 0.5)
    e = energy(model, np.array([[1.0, 2.0]]))
    assert np.allclose(e, [1.5])
    e2, grad = model.energy_and_grad(np.array([[1.0, 2.0]]))
    assert np.allclose(e2, [1.5])
    assert np.allclose(grad, [[3.0, -1.0]])


def test_energy_default_architecture_accepts_64():
    model = init_energy_model(64, EbmTrainConfig(), Rng(0))
    e = energy(model, Rng(1).gaussian((5, 64)))
    assert e.shape == (5,)
    assert np.all(np.isfinite(e))


def test_params_for_selects_ema():
    model = init_energy_model(4, EbmTrainConfig(), Rng(0))
    assert model.params_for(False) is model.net
    assert model.params_for(True) is model.ema.shadow


def test_langevin_zero_steps_is_copy():
    z0 = Rng(0).gaussian((4, 3))
    out = langevin_sample(zero_energy(3), z0, LangevinConfig(steps=0), Rng(1))
    assert np.array_equal(out, z0)
    assert out is not z0


def test_langevin_does_not_mutate_input():
    z0 = Rng(0).gaussian((4, 3))
    kept = z0.copy()
    langevin_sample(QuadraticEnergy(), z0, LangevinConfig(steps=5), Rng(1))
    assert np.array_equal(z0, kept)


def test_langevin_quadratic_closed_form():
    # noise-free, unclipped: z_k = (1 - step_size/2)^k * z_0
    z0 = Rng(2).gaussian((6, 5))
    cfg = LangevinConfig(steps=40, step_size=0.1, noise_enabled=False, grad_clip=None)
    out = langevin_sample(QuadraticEnergy(), z0, cfg, Rng(3))
    expected = z0 * (1.0 - 0.05) ** 40
    assert np.max(np.abs(out - expected)) < 1e-12


def test_langevin_noise_free_descends_quadratic():
    z0 = Rng(4).gaussian((8, 4)) * 3.0
    q = QuadraticEnergy()
    cfg = LangevinConfig(steps=1, step_size=0.1, noise_enabled=False, grad_clip=None)
    z = z0
    prev_e = q.energy_and_grad(z)[0]
    for _ in range(25):
        z = langevin_sample(q, z, cfg, Rng(0))
        e = q.energy_and_grad(z)[0]
        assert np.all(e <= prev_e + 1e-15)
        prev_e = e


def test_langevin_grad_clip_limits_step():
    # grad = z = 10, clip 0.03: one noise-free step moves by 0.05 * 0.03
    cfg = LangevinConfig(steps=1, step_size=0.1, noise_enabled=False, grad_clip=0.03)
    out = langevin_sample(QuadraticEnergy(), np.array([[10.0]]), cfg, Rng(0))
    assert np.isclose(out[0, 0], 10.0 - 0.05 * 0.03, atol=1e-15)


def test_langevin_noise_is_seed_deterministic():
    z0 = Rng(5).gaussian((4, 3))
    cfg = LangevinConfig(steps=10)
    a = langevin_sample(QuadraticEnergy(), z0, cfg, Rng(7))
    b = langevin_sample(QuadraticEnergy(), z0, cfg, Rng(7))
    c = langevin_sample(QuadraticEnergy(), z0, cfg, Rng(8))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_langevin_raises_on_non_finite():
    with pytest.raises(NumericError, match="step 0"):
        langevin_sample(BrokenEnergy(), np.ones((2, 2)), LangevinConfig(steps=3), Rng(0))


def test_learn_ebm_zero_iterations_is_init_only():
    rng = Rng(9)
    prev, curr = cluster_streams(Rng(1), 6, 2.0, 16, 1)
    cfg = EbmTrainConfig(iterations=0, hidden_dims=(8,))
    model = learn_ebm(prev, curr, cfg, rng)
    fresh = init_energy_model(6, cfg, Rng(9).child(0))
    got, want = model.net.flat(), fresh.net.flat()
    # no training steps ran; only the head orientation pick may have
    # negated the final layer weight
    for a, b in zip(got[:-2], want[:-2]):
        assert np.array_equal(a, b)
    assert np.array_equal(got[-1], want[-1])
    assert np.array_equal(got[-2], want[-2]) or np.array_equal(got[-2], -want[-2])


def test_learn_ebm_deterministic():
    prev, curr = cluster_streams(Rng(1), 5, 3.0, 24, 12)
    cfg = EbmTrainConfig(iterations=12, batch_size=24, hidden_dims=(16,))
    a = learn_ebm(list(prev), list(curr), cfg, Rng(3))
    b = learn_ebm(list(prev), list(curr), cfg, Rng(3))
    for x, y in zip(a.net.flat(), b.net.flat()):
        assert np.array_equal(x, y)
    for x, y in zip(a.ema.shadow.flat(), b.ema.shadow.flat()):
        assert np.array_equal(x, y)


def test_learn_ebm_separates_shifted_clusters():
    rng = Rng(20)
    dim, batch = 8, 64
    offset = np.zeros(dim)
    offset[0] = 4.0
    prev, curr = cluster_streams(rng.child(0), dim, offset, batch, 400)
    cfg = EbmTrainConfig(iterations=400, batch_size=batch, hidden_dims=(32, 32))
    model = learn_ebm(prev, curr, cfg, rng.child(1))
    holdout = rng.child(2)
    e_prev = energy(model, holdout.gaussian((512, dim)), use_ema=True)
    e_curr = energy(model, holdout.gaussian((512, dim)) + offset, use_ema=True)
    assert e_prev.mean() < e_curr.mean()


def test_learn_ebm_stream_dim_change_rejected():
    prev = [np.zeros((4, 3)), np.zeros((4, 5))]
    curr = [np.ones((4, 3)), np.ones((4, 5))]
    with pytest.raises(ShapeError, match="iteration 1"):
        learn_ebm(prev, curr, EbmTrainConfig(iterations=2, hidden_dims=(4,)), Rng(0))


def test_learn_ebm_exhausted_stream_reported():
    prev, curr = cluster_streams(Rng(1), 3, 1.0, 8, 2)
    with pytest.raises(ValueError, match="exhausted"):
        learn_ebm(prev, curr, EbmTrainConfig(iterations=5, hidden_dims=(4,)), Rng(0))


def test_learn_ebm_literal_sign_runs():
    prev, curr = cluster_streams(Rng(1), 4, 2.0, 16, 10)
    cfg = EbmTrainConfig(iterations=10, hidden_dims=(8,), loss_sign="literal")
    model = learn_ebm(prev, curr, cfg, Rng(2))
    e = energy(model, Rng(3).gaussian((8, 4)))
    assert np.all(np.isfinite(e))


def test_config_validation():
    with pytest.raises(ValueError):
        EbmTrainConfig(iterations=-1)
    with pytest.raises(ValueError):
        EbmTrainConfig(loss_sign="other")
    with pytest.raises(ValueError):
        LangevinConfig(step_size=0.0)
    with pytest.raises(ValueError):
        LangevinConfig(grad_clip=-0.1)
