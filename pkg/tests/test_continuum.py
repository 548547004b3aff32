import numpy as np
import pytest

from eli.align import AlignConfig
from eli.continuum import (
    ClassifierModel,
    DataError,
    ExperimentConfig,
    PhaseConfig,
    StageError,
    SyntheticConfig,
    Task,
    TaskStream,
    build_synthetic_drift,
    build_two_task_mnist,
    evaluate,
    extract_latents,
    finetune,
    fit_pipeline,
    identity_backbone,
    report_pipeline,
    resolve_data_root,
    run_eli_experiment,
    train_base,
)
from eli.ebm import EbmTrainConfig
from eli.nn import kaiming_init
from eli.rng import Rng


def small_cfg(**kw):
    defaults = dict(
        dataset="synthetic",
        latent_dim=8,
        backbone_hidden=(16,),
        snapshot_rows=40,
        base=PhaseConfig(epochs=3, learning_rate=0.05),
        finetune=PhaseConfig(epochs=3, learning_rate=0.05),
        ebm=EbmTrainConfig(iterations=40),
        synthetic=SyntheticConfig(
            dim=12, samples_per_class=60, test_samples_per_class=30, drift=4.0
        ),
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


# ---------------------------------------------------------------------------
# Streams and validation
# ---------------------------------------------------------------------------

def test_task_stream_rejects_overlapping_classes():
    x = np.zeros((2, 3))
    with pytest.raises(DataError, match="overlaps"):
        TaskStream(tasks=[
            Task(1, (0, 1), x, np.array([0, 1])),
            Task(2, (1, 2), x, np.array([1, 2])),
        ])


def test_task_stream_rejects_count_mismatch():
    with pytest.raises(DataError, match="labels for"):
        TaskStream(tasks=[Task(1, (0,), np.zeros((3, 2)), np.array([0]))])


def test_task_stream_rejects_foreign_labels():
    with pytest.raises(DataError, match="outside class set"):
        TaskStream(tasks=[Task(1, (0, 1), np.zeros((2, 2)), np.array([0, 7]))])


def test_build_synthetic_drift_properties():
    cfg = SyntheticConfig(dim=10, classes_per_task=3, samples_per_class=20,
                          test_samples_per_class=10, drift=4.0)
    train, test, vec = build_synthetic_drift(Rng(2), cfg)
    assert [t.task_id for t in train.tasks] == [1, 2]
    assert train.tasks[0].class_set == (0, 1, 2)
    assert train.tasks[1].class_set == (3, 4, 5)
    assert train.tasks[0].features.shape == (60, 10)
    assert test.tasks[0].features.shape == (30, 10)
    assert np.linalg.norm(vec) == pytest.approx(4.0)
    again = build_synthetic_drift(Rng(2), cfg)
    np.testing.assert_array_equal(again[0].tasks[0].features, train.tasks[0].features)
    np.testing.assert_array_equal(again[2], vec)


def test_build_synthetic_drift_zero():
    cfg = SyntheticConfig(dim=6, drift=0.0, samples_per_class=5, test_samples_per_class=5)
    _, _, vec = build_synthetic_drift(Rng(0), cfg)
    assert np.linalg.norm(vec) == 0.0


def test_identity_backbone_applies_shift():
    shift = np.array([1.0, -2.0, 0.5])
    bb = identity_backbone(3, shift)
    z = extract_latents(bb, np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(z.latents, np.array([[2.0, -1.0, 1.5], shift]))
    plain = identity_backbone(3)
    z2 = extract_latents(plain, np.array([[3.0, 4.0, 5.0]]))
    np.testing.assert_array_equal(z2.latents, [[3.0, 4.0, 5.0]])


def test_resolve_data_root_precedence(monkeypatch):
    monkeypatch.delenv("ELI_DATA_ROOT", raising=False)
    assert str(resolve_data_root("")) == str(resolve_data_root())
    monkeypatch.setenv("ELI_DATA_ROOT", "/somewhere/mnist")
    assert str(resolve_data_root("")) == "/somewhere/mnist"
    assert str(resolve_data_root("explicit/path")) == "explicit/path"


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

def make_stream(seed=4, dim=10):
    cfg = SyntheticConfig(dim=dim, classes_per_task=3, samples_per_class=60,
                          test_samples_per_class=30, drift=3.0)
    train, test, _ = build_synthetic_drift(Rng(seed), cfg)
    return train, test


def test_train_base_learns_task1():
    train, test = make_stream()
    cfg = small_cfg(synthetic=SyntheticConfig(dim=10))
    model = train_base(train, cfg, Rng(1))
    assert model.class_set == (0, 1, 2)
    assert model.backbone.out_dim == cfg.latent_dim
    t1 = test.tasks[0]
    acc = evaluate(model.head, model.backbone, t1.features, t1.labels, model.class_set)
    assert acc > 0.9


def test_finetune_fresh_head_and_frozen_original():
    train, test = make_stream()
    cfg = small_cfg(synthetic=SyntheticConfig(dim=10))
    model = train_base(train, cfg, Rng(1))
    saved = model.copy()
    drifted = finetune(model, train, cfg, Rng(2))
    assert drifted.class_set == (3, 4, 5)
    assert drifted.head.out_dim == 3
    for a, b in zip(model.backbone.layers, saved.backbone.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)
    t2 = test.tasks[1]
    acc = evaluate(drifted.head, drifted.backbone, t2.features, t2.labels, drifted.class_set)
    assert acc > 0.9


def test_evaluate_chunking_invariant():
    train, test = make_stream()
    cfg = small_cfg(synthetic=SyntheticConfig(dim=10))
    model = train_base(train, cfg, Rng(1))
    t1 = test.tasks[0]
    full = evaluate(model.head, model.backbone, t1.features, t1.labels, model.class_set)
    tiny = evaluate(model.head, model.backbone, t1.features, t1.labels,
                    model.class_set, chunk=7)
    assert full == tiny


def test_evaluate_applies_aligner():
    bb = identity_backbone(2)
    head = kaiming_init(Rng(0), [2, 2])
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    y = np.array([0, 1])
    flipped = evaluate(head, bb, x, y, (0, 1), aligner=lambda z: -z)
    normal = evaluate(head, bb, x, y, (0, 1))
    assert flipped == 1.0 - normal


def test_evaluate_rejects_empty():
    bb = identity_backbone(2)
    head = kaiming_init(Rng(0), [2, 2])
    with pytest.raises(ValueError, match="empty"):
        evaluate(head, bb, np.zeros((0, 2)), np.zeros(0), (0, 1))


def test_extract_latents_row_order():
    bb = identity_backbone(2)
    x = np.array([[5.0, 0.0], [1.0, 1.0], [0.0, 9.0]])
    batch = extract_latents(bb, x, origin="probe")
    np.testing.assert_array_equal(batch.latents, x)
    assert batch.origin == "probe"
    model = ClassifierModel(bb, kaiming_init(Rng(0), [2, 2]), (0, 1))
    np.testing.assert_array_equal(extract_latents(model, x).latents, x)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def test_fit_pipeline_stage_order():
    stages = []
    fit_pipeline(small_cfg(), stage_hook=stages.append)
    assert stages == ["load_data", "train_base", "finetune", "learn_ebm", "fit_done"]


def test_synthetic_pipeline_energy_separation():
    """Drifted task-2 latents read as high energy; alignment walks downhill."""
    cfg = small_cfg(
        synthetic=SyntheticConfig(dim=12, samples_per_class=100,
                                  test_samples_per_class=60, drift=4.0),
        ebm=EbmTrainConfig(iterations=300),
    )
    report = run_eli_experiment(cfg)
    assert report.accuracies["pre_drift"] > 0.95
    es = report.energy_stats
    assert es["mean_in"] < es["mean_out"]
    assert es["mean_after_align"] <= es["mean_before_align"] + 1e-9


def test_zero_drift_alignment_is_harmless():
    cfg = small_cfg(
        synthetic=SyntheticConfig(dim=12, samples_per_class=100,
                                  test_samples_per_class=60, drift=0.0),
        ebm=EbmTrainConfig(iterations=300),
    )
    report = run_eli_experiment(cfg)
    acc = report.accuracies
    assert abs(acc["aligned"] - acc["drifted"]) <= 0.01


def test_report_pipeline_reuses_state():
    cfg = small_cfg(ebm=EbmTrainConfig(iterations=150),
                    align=AlignConfig(l_steps=10, learning_rate=0.5))
    state = fit_pipeline(cfg)
    r1 = report_pipeline(state)
    r2 = report_pipeline(state, align_cfg=AlignConfig(l_steps=0, learning_rate=0.5))
    assert r2.accuracies["aligned"] == r2.accuracies["drifted"]
    assert r1.accuracies["pre_drift"] == r2.accuracies["pre_drift"]
    assert r2.config["align.l_steps"] == 0
    assert r1.config["align.l_steps"] == 10


def test_report_snapshot_rows_capped():
    cfg = small_cfg(snapshot_rows=25)
    report = run_eli_experiment(cfg)
    assert report.scatter_before.shape == (25, 2)
    assert report.energy_trace.shape[0] == 25
    assert report.scatter_classes.shape == (25,)
    assert set(report.scatter_tasks.tolist()) == {1}


def test_pipeline_wraps_stage_failures():
    cfg = small_cfg()
    bad_train = TaskStream(tasks=[Task(1, (0, 1), np.zeros((2, 3)), np.array([0, 1]))])
    bad_test = TaskStream(tasks=[Task(1, (0, 1), np.zeros((2, 3)), np.array([0, 1]))],
                          split="test")
    with pytest.raises(StageError) as err:
        fit_pipeline(cfg, streams=(bad_train, bad_test))
    assert err.value.stage == "load_data"


def test_mnist_build_requires_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        build_two_task_mnist(tmp_path)


class CountingFeatures:
    """Feature matrix double that counts every materialization to an array."""

    def __init__(self, arr):
        self._arr = np.asarray(arr)
        self.reads = 0

    def __array__(self, dtype=None, *args, **kwargs):
        self.reads += 1
        return self._arr if dtype is None else self._arr.astype(dtype)


def test_learn_ebm_never_reads_task1_training_data():
    cfg = small_cfg()
    train, test, _ = build_synthetic_drift(Rng(cfg.seed).child(0), cfg.synthetic)
    counter = CountingFeatures(train.tasks[0].features)
    train.tasks[0].features = counter
    at_stage = {}

    def hook(stage):
        at_stage[stage] = counter.reads

    fit_pipeline(cfg, streams=(train, test), stage_hook=hook)
    assert at_stage["learn_ebm"] > 0
    assert at_stage["fit_done"] == at_stage["learn_ebm"]
    assert counter.reads == at_stage["learn_ebm"]
