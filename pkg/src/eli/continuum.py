"""Two-task incremental harness: train, drift, realign, evaluate.

The storyline: a backbone + head classifier learns task 1, then the backbone
is finetuned on task 2 (task 1 data is gone at that point), which drags task-1
latents off the manifold the frozen task-1 head was calibrated for. An energy
network is fitted from task-2 data pushed through both backbone versions, and
at evaluation time drifted task-1 latents are walked down that energy surface
before the old head sees them.

Data isolation is structural: after the finetune stage, nothing here touches
task-1 training data again; the energy model sees only task-2 batches.
"""
from __future__ import annotations

import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .align import AlignConfig, align_latents, align_snapshots, per_dimension_delta
from .dataio import AlignmentReport, DataError, find_idx_file, pca_2d, read_idx
from .ebm import EbmTrainConfig, EnergyModel, LatentBatch, energy, learn_ebm
from .nn import Layer, MlpParams, kaiming_init, mlp_backward_params, mlp_forward
from .optim import momentum_init, momentum_step, rmsprop_init, rmsprop_step
from .rng import Rng

log = logging.getLogger("eli")

DATA_ROOT_ENV = "ELI_DATA_ROOT"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class StageError(RuntimeError):
    """A pipeline stage failed; `stage` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# Tasks and streams
# ---------------------------------------------------------------------------

@dataclass
class Task:
    """One task's examples: feature rows, integer labels, declared class set."""

    task_id: int
    class_set: tuple[int, ...]
    features: np.ndarray
    labels: np.ndarray


@dataclass
class TaskStream:
    """Ordered tasks of one split; class sets must be pairwise disjoint."""

    tasks: list
    split: str = "train"

    def __post_init__(self):
        seen: set[int] = set()
        for t in self.tasks:
            cs = set(t.class_set)
            if cs & seen:
                raise DataError(
                    f"task {t.task_id}: class set {sorted(cs)} overlaps earlier tasks"
                )
            seen |= cs
            labels = np.asarray(t.labels)
            if labels.shape[0] != np.asarray(t.features).shape[0]:
                raise DataError(
                    f"task {t.task_id}: {labels.shape[0]} labels for "
                    f"{np.asarray(t.features).shape[0]} feature rows"
                )
            extra = set(np.unique(labels).tolist()) - cs
            if extra:
                raise DataError(f"task {t.task_id}: labels {sorted(extra)} outside class set")


@dataclass
class ClassifierModel:
    """Feature backbone plus a linear head over `class_set` (in that order)."""

    backbone: MlpParams
    head: MlpParams
    class_set: tuple[int, ...]

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(self.backbone.copy(), self.head.copy(), tuple(self.class_set))


# ---------------------------------------------------------------------------
# Configs
# ---------------------------------------------------------------------------

PHASE_OPTIMIZERS = ("sgd", "rmsprop")


@dataclass
class PhaseConfig:
    """One supervised training phase (softmax cross-entropy).

    `optimizer` picks the update rule: "sgd" is heavy-ball momentum SGD and
    ignores nothing, "rmsprop" ignores the momentum field.
    """

    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.01
    momentum: float = 0.9
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.optimizer not in PHASE_OPTIMIZERS:
            raise ValueError(
                f"optimizer must be one of {PHASE_OPTIMIZERS}, got {self.optimizer!r}"
            )


@dataclass
class SyntheticConfig:
    """Gaussian cluster surrogate where drift is an exact translation."""

    dim: int = 32
    classes_per_task: int = 3
    samples_per_class: int = 400
    test_samples_per_class: int = 200
    cluster_std: float = 1.0
    class_separation: float = 8.0
    drift: float = 4.0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.classes_per_task < 2:
            raise ValueError(f"classes_per_task must be >= 2, got {self.classes_per_task}")
        if self.drift < 0:
            raise ValueError(f"drift must be >= 0, got {self.drift}")


@dataclass
class ExperimentConfig:
    dataset: str = "mnist"
    data_root: str = ""
    seed: int = 0
    latent_dim: int = 32
    backbone_hidden: tuple[int, ...] = (256, 128)
    snapshot_rows: int = 512
    base: PhaseConfig = field(default_factory=PhaseConfig)
    finetune: PhaseConfig = field(default_factory=PhaseConfig)
    ebm: EbmTrainConfig = field(default_factory=EbmTrainConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if self.dataset not in ("mnist", "synthetic"):
            raise ValueError(f"dataset must be 'mnist' or 'synthetic', got {self.dataset!r}")
        if self.latent_dim <= 0:
            raise ValueError(f"latent_dim must be positive, got {self.latent_dim}")
        if self.snapshot_rows <= 0:
            raise ValueError(f"snapshot_rows must be positive, got {self.snapshot_rows}")
        self.backbone_hidden = tuple(int(d) for d in self.backbone_hidden)

    def flat(self) -> dict:
        """Nested config as a JSON-friendly dict of dotted keys."""
        out: dict = {}

        def walk(prefix: str, obj):
            for k, v in obj.items():
                key = f"{prefix}.{k}" if prefix else k
                if isinstance(v, dict):
                    walk(key, v)
                elif isinstance(v, tuple):
                    out[key] = list(v)
                else:
                    out[key] = v

        walk("", asdict(self))
        return out


def resolve_data_root(configured: str = "") -> Path:
    """Explicit setting, else the ELI_DATA_ROOT variable, else ./data/mnist."""
    if configured:
        return Path(configured)
    env = os.environ.get(DATA_ROOT_ENV, "")
    if env:
        return Path(env)
    return Path("data") / "mnist"


# ---------------------------------------------------------------------------
# Dataset builders
# ---------------------------------------------------------------------------

def _load_split(root: Path, images_stem: str, labels_stem: str) -> tuple[np.ndarray, np.ndarray]:
    images = read_idx(find_idx_file(root, images_stem))
    labels = read_idx(find_idx_file(root, labels_stem))
    if images.rank != 3:
        raise DataError(f"{images_stem}: expected rank-3 image file, got rank {images.rank}")
    if labels.rank != 1:
        raise DataError(f"{labels_stem}: expected rank-1 label file, got rank {labels.rank}")
    if images.dims[0] != labels.dims[0]:
        raise DataError(
            f"{images_stem} holds {images.dims[0]} images but {labels_stem} "
            f"holds {labels.dims[0]} labels"
        )
    y = labels.payload.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() > 9):
        raise DataError(f"{labels_stem}: labels outside 0..9")
    n = images.dims[0]
    x = images.payload.reshape(n, -1).astype(np.float64) / 255.0
    return x, y


def _split_tasks(x: np.ndarray, y: np.ndarray, split: str) -> TaskStream:
    first = y < 5
    return TaskStream(
        tasks=[
            Task(1, (0, 1, 2, 3, 4), x[first], y[first]),
            Task(2, (5, 6, 7, 8, 9), x[~first], y[~first]),
        ],
        split=split,
    )


def build_two_task_mnist(data_root: str | Path) -> tuple[TaskStream, TaskStream]:
    """Digits 0-4 as task 1 and 5-9 as task 2, for train and test splits.

    `data_root` must hold the four standard IDX files (plain or .gz). Pixels
    are scaled to [0, 1] and flattened to 784 features.
    """
    root = Path(data_root)
    x_tr, y_tr = _load_split(root, MNIST_FILES["train_images"], MNIST_FILES["train_labels"])
    x_te, y_te = _load_split(root, MNIST_FILES["test_images"], MNIST_FILES["test_labels"])
    return _split_tasks(x_tr, y_tr, "train"), _split_tasks(x_te, y_te, "test")


def build_synthetic_drift(
    rng: Rng, cfg: SyntheticConfig
) -> tuple[TaskStream, TaskStream, np.ndarray]:
    """Gaussian clusters for two tasks, plus the exact drift translation.

    The drift vector is not baked into the data: it defines the post-drift
    extractor (identity plus that bias), so the pre/post latent relationship
    is known in closed form. drift = 0 gives a genuinely drift-free control.
    """
    n_total = 2 * cfg.classes_per_task
    if cfg.dim >= n_total:
        means = np.zeros((n_total, cfg.dim))
        for c in range(n_total):
            means[c, c] = cfg.class_separation / np.sqrt(2.0)
    else:
        means = rng.child(0).gaussian((n_total, cfg.dim))
        means *= cfg.class_separation / np.sqrt(2.0 * cfg.dim)

    direction = rng.child(1).gaussian(cfg.dim)
    direction /= np.linalg.norm(direction)
    drift_vec = cfg.drift * direction

    def make_tasks(split_rng: Rng, per_class: int, split: str) -> TaskStream:
        tasks = []
        for task_id in (1, 2):
            class_ids = range((task_id - 1) * cfg.classes_per_task, task_id * cfg.classes_per_task)
            xs, ys = [], []
            for c in class_ids:
                pts = means[c] + cfg.cluster_std * split_rng.child(c).gaussian((per_class, cfg.dim))
                xs.append(pts)
                ys.append(np.full(per_class, c, dtype=np.int64))
            tasks.append(
                Task(task_id, tuple(class_ids), np.vstack(xs), np.concatenate(ys))
            )
        return TaskStream(tasks=tasks, split=split)

    train = make_tasks(rng.child(2), cfg.samples_per_class, "train")
    test = make_tasks(rng.child(3), cfg.test_samples_per_class, "test")
    return train, test, drift_vec


def identity_backbone(dim: int, shift: np.ndarray | None = None) -> MlpParams:
    """Single identity-activation layer computing x + shift (shift 0 if None)."""
    bias = np.zeros(dim) if shift is None else np.asarray(shift, dtype=np.float64)
    return MlpParams([Layer(np.eye(dim), bias, "identity")])


# ---------------------------------------------------------------------------
# Classifier training and evaluation
# ---------------------------------------------------------------------------

def _forward_chunks(params: MlpParams, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    outs = [mlp_forward(params, x[i : i + chunk])[0] for i in range(0, x.shape[0], chunk)]
    return outs[0] if len(outs) == 1 else np.vstack(outs)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _train_softmax(params: MlpParams, x: np.ndarray, y_idx: np.ndarray,
                   phase: PhaseConfig, rng: Rng) -> MlpParams:
    if phase.optimizer == "rmsprop":
        opt = rmsprop_init(params, phase.learning_rate)
        step = rmsprop_step
    else:
        opt = momentum_init(params, phase.learning_rate, phase.momentum)
        step = momentum_step
    n = x.shape[0]
    for epoch in range(phase.epochs):
        order = rng.child(epoch).permutation(n)
        for start in range(0, n, phase.batch_size):
            idx = order[start : start + phase.batch_size]
            logits, cache = mlp_forward(params, x[idx])
            dlogits = _softmax(logits)
            dlogits[np.arange(idx.shape[0]), y_idx[idx]] -= 1.0
            dlogits /= idx.shape[0]
            grads = mlp_backward_params(params, cache, dlogits)
            params, opt = step(params, grads, opt)
    return params


def _class_indexer(class_set: tuple[int, ...]) -> dict[int, int]:
    return {int(c): i for i, c in enumerate(class_set)}


def train_base(stream: TaskStream, cfg: ExperimentConfig, rng: Rng) -> ClassifierModel:
    """Fit backbone + head jointly on the stream's first task."""
    task = stream.tasks[0]
    class_set = tuple(int(c) for c in task.class_set)
    features = np.asarray(task.features, dtype=np.float64)
    in_dim = features.shape[1]
    backbone = kaiming_init(rng.child(0), [in_dim, *cfg.backbone_hidden, cfg.latent_dim])
    head = kaiming_init(rng.child(1), [cfg.latent_dim, len(class_set)])
    idx_of = _class_indexer(class_set)
    y_idx = np.array([idx_of[int(c)] for c in task.labels], dtype=np.int64)
    composite = MlpParams(backbone.layers + head.layers)
    composite = _train_softmax(composite, features, y_idx, cfg.base, rng.child(2))
    split = len(backbone.layers)
    return ClassifierModel(
        backbone=MlpParams(composite.layers[:split]),
        head=MlpParams(composite.layers[split:]),
        class_set=class_set,
    )


def finetune(model: ClassifierModel, stream: TaskStream, cfg: ExperimentConfig, rng: Rng) -> ClassifierModel:
    """Continue the backbone on the stream's second task with a fresh head.

    Returns a new model; `model` is left untouched (its head is the one the
    aligned latents are evaluated through later).
    """
    task = stream.tasks[1]
    class_set = tuple(int(c) for c in task.class_set)
    features = np.asarray(task.features, dtype=np.float64)
    head = kaiming_init(rng.child(0), [model.backbone.out_dim, len(class_set)])
    idx_of = _class_indexer(class_set)
    y_idx = np.array([idx_of[int(c)] for c in task.labels], dtype=np.int64)
    composite = MlpParams(model.backbone.copy().layers + head.layers)
    composite = _train_softmax(composite, features, y_idx, cfg.finetune, rng.child(1))
    split = len(model.backbone.layers)
    return ClassifierModel(
        backbone=MlpParams(composite.layers[:split]),
        head=MlpParams(composite.layers[split:]),
        class_set=class_set,
    )


def extract_latents(model, examples: np.ndarray, origin: str | None = None) -> LatentBatch:
    """Backbone outputs for `examples`, row order preserved.

    `model` may be a ClassifierModel or bare backbone parameters. The origin
    tag is whatever the caller wants recorded.
    """
    params = model.backbone if isinstance(model, ClassifierModel) else model
    return LatentBatch(_forward_chunks(params, np.asarray(examples, dtype=np.float64)),
                       origin=origin)


def _accuracy(logits: np.ndarray, labels: np.ndarray, class_set: tuple[int, ...]) -> float:
    pred = np.asarray(class_set)[np.argmax(logits, axis=1)]
    return float(np.mean(pred == np.asarray(labels)))


def evaluate(
    head: MlpParams,
    backbone: MlpParams,
    features: np.ndarray,
    labels: np.ndarray,
    class_set: tuple[int, ...],
    aligner=None,
    chunk: int = 4096,
) -> float:
    """Accuracy of head(aligner(backbone(x))) against labels, in [0, 1].

    `aligner` (optional) maps a latent batch to a latent batch. Evaluation is
    chunked; rows are independent, so chunking never changes the result.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise ValueError("evaluate: empty evaluation set")
    correct = 0
    for i in range(0, features.shape[0], chunk):
        z = mlp_forward(backbone, features[i : i + chunk])[0]
        if aligner is not None:
            z = aligner(z)
        logits = mlp_forward(head, z)[0]
        pred = np.asarray(class_set)[np.argmax(logits, axis=1)]
        correct += int(np.sum(pred == labels[i : i + chunk]))
    return correct / features.shape[0]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineState:
    """Everything the fit stages produce; feeds any number of report passes."""

    cfg: ExperimentConfig
    train_stream: TaskStream
    test_stream: TaskStream
    model_prev: ClassifierModel
    model_curr: ClassifierModel
    energy_model: EnergyModel
    stage_seconds: dict = field(default_factory=dict)


@contextmanager
def _stage(name: str, hook, timings: dict):
    if hook is not None:
        hook(name)
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - start
    log.info("stage %s: %.2fs", name, timings[name])


def _index_batches(n: int, batch_size: int, rng: Rng, count: int):
    """`count` index batches, reshuffling whenever a pass is exhausted."""
    batch_size = min(batch_size, n)
    order = rng.permutation(n)
    pos = 0
    for _ in range(count):
        if pos + batch_size > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos : pos + batch_size]
        pos += batch_size


def _latent_stream(latents: np.ndarray, batch_size: int, rng: Rng, count: int):
    for idx in _index_batches(latents.shape[0], batch_size, rng, count):
        yield latents[idx]


def _vector_maps(state_cfg: AlignConfig, model_prev: ClassifierModel,
                 model_curr: ClassifierModel) -> tuple[MlpParams, MlpParams]:
    """The pre/post extractors the energy model lives on top of.

    Latent space: the two backbones. Logit space: each backbone composed with
    the frozen first-task head, so drift is still the only difference.
    """
    if state_cfg.space == "latent":
        return model_prev.backbone, model_curr.backbone
    head = model_prev.head
    return (
        MlpParams(model_prev.backbone.layers + head.layers),
        MlpParams(model_curr.backbone.layers + head.layers),
    )


def fit_pipeline(cfg: ExperimentConfig, streams=None, stage_hook=None) -> PipelineState:
    """Run the training stages: load_data, train_base, finetune, learn_ebm.

    `streams` (train, test) skips dataset construction when given. The hook
    is called with each stage's name as it begins, and with "fit_done" at the
    end; between the "learn_ebm" call and "fit_done" no task-1 data is read.
    """
    timings: dict = {}
    rng = Rng(cfg.seed)
    drift_vec = None

    with _stage("load_data", stage_hook, timings):
        if streams is not None:
            train_stream, test_stream = streams
        elif cfg.dataset == "mnist":
            train_stream, test_stream = build_two_task_mnist(resolve_data_root(cfg.data_root))
        else:
            train_stream, test_stream, drift_vec = build_synthetic_drift(rng.child(0), cfg.synthetic)
        if len(train_stream.tasks) != 2 or len(test_stream.tasks) != 2:
            raise DataError("expected exactly two tasks per stream")

    synthetic = cfg.dataset == "synthetic" and streams is None

    with _stage("train_base", stage_hook, timings):
        if synthetic:
            task = train_stream.tasks[0]
            dim = np.asarray(task.features).shape[1]
            class_set = tuple(int(c) for c in task.class_set)
            head = kaiming_init(rng.child(1), [dim, len(class_set)])
            idx_of = _class_indexer(class_set)
            y_idx = np.array([idx_of[int(c)] for c in task.labels], dtype=np.int64)
            head = _train_softmax(head, np.asarray(task.features, dtype=np.float64),
                                  y_idx, cfg.base, rng.child(2))
            model_prev = ClassifierModel(identity_backbone(dim), head, class_set)
        else:
            model_prev = train_base(train_stream, cfg, rng.child(1))

    with _stage("finetune", stage_hook, timings):
        if synthetic:
            dim = model_prev.backbone.in_dim
            model_curr = ClassifierModel(
                identity_backbone(dim, drift_vec),
                model_prev.head.copy(),
                tuple(int(c) for c in train_stream.tasks[1].class_set),
            )
        else:
            model_curr = finetune(model_prev, train_stream, cfg, rng.child(2))

    with _stage("learn_ebm", stage_hook, timings):
        task2 = train_stream.tasks[1]
        f_prev, f_curr = _vector_maps(cfg.align, model_prev, model_curr)
        x2 = np.asarray(task2.features, dtype=np.float64)
        z2_prev = _forward_chunks(f_prev, x2)
        z2_curr = _forward_chunks(f_curr, x2)
        count = cfg.ebm.iterations
        prev_stream = _latent_stream(z2_prev, cfg.ebm.batch_size, rng.child(3), count)
        curr_stream = _latent_stream(z2_curr, cfg.ebm.batch_size, rng.child(3), count)
        energy_model = learn_ebm(prev_stream, curr_stream, cfg.ebm, rng.child(4))

    if stage_hook is not None:
        stage_hook("fit_done")
    return PipelineState(
        cfg=cfg,
        train_stream=train_stream,
        test_stream=test_stream,
        model_prev=model_prev,
        model_curr=model_curr,
        energy_model=energy_model,
        stage_seconds=timings,
    )


def report_pipeline(state: PipelineState, align_cfg: AlignConfig | None = None,
                    stage_hook=None) -> AlignmentReport:
    """Evaluate, align, and package one report from a fitted state.

    `align_cfg` overrides the alignment settings without refitting anything,
    which is how step-count and learning-rate sensitivity comparisons reuse a
    single trained state.
    """
    cfg = state.cfg
    align_cfg = align_cfg if align_cfg is not None else cfg.align
    timings = dict(state.stage_seconds)
    model_prev, model_curr = state.model_prev, state.model_curr
    ebm = state.energy_model
    task1_test = state.test_stream.tasks[0]
    task2_test = state.test_stream.tasks[1]
    class_set = model_prev.class_set
    x1 = np.asarray(task1_test.features, dtype=np.float64)
    y1 = np.asarray(task1_test.labels)
    f_prev, f_curr = _vector_maps(align_cfg, model_prev, model_curr)
    latent_space = align_cfg.space == "latent"

    with _stage("evaluate", stage_hook, timings):
        if x1.shape[0] == 0:
            raise ValueError("task-1 test set is empty")
        v_pre = _forward_chunks(f_prev, x1)
        v_drift = _forward_chunks(f_curr, x1)
        if latent_space:
            acc_pre = _accuracy(_forward_chunks(model_prev.head, v_pre), y1, class_set)
            acc_drift = _accuracy(_forward_chunks(model_prev.head, v_drift), y1, class_set)
        else:
            acc_pre = _accuracy(v_pre, y1, class_set)
            acc_drift = _accuracy(v_drift, y1, class_set)

    with _stage("align", stage_hook, timings):
        aligned = align_latents(ebm, v_drift, align_cfg)
        if latent_space:
            acc_aligned = _accuracy(_forward_chunks(model_prev.head, aligned), y1, class_set)
        else:
            acc_aligned = _accuracy(aligned, y1, class_set)

    with _stage("report", stage_hook, timings):
        rows = min(cfg.snapshot_rows, x1.shape[0])
        sub = np.sort(Rng(cfg.seed).child(5).permutation(x1.shape[0])[:rows])
        _, trace, snaps = align_snapshots(ebm, v_drift[sub], align_cfg)
        dim_delta = per_dimension_delta(v_drift[sub], snaps)

        z2 = np.asarray(task2_test.features, dtype=np.float64)
        e_in = energy(ebm, _forward_chunks(f_prev, z2), use_ema=align_cfg.use_ema)
        e_out = energy(ebm, _forward_chunks(f_curr, z2), use_ema=align_cfg.use_ema)
        e_before = energy(ebm, v_drift, use_ema=align_cfg.use_ema)
        e_after = energy(ebm, aligned, use_ema=align_cfg.use_ema)

        before_sub = v_drift[sub]
        after_sub = aligned[sub]
        coords = pca_2d(np.vstack([before_sub, after_sub]))
        scatter_before = coords[:rows]
        scatter_after = coords[rows:]

        flat_cfg = cfg.flat()
        if align_cfg is not cfg.align:
            for key, value in (
                ("align.l_steps", align_cfg.l_steps),
                ("align.learning_rate", align_cfg.learning_rate),
                ("align.use_ema", align_cfg.use_ema),
                ("align.space", align_cfg.space),
            ):
                flat_cfg[key] = value

        report = AlignmentReport(
            seed=cfg.seed,
            config=flat_cfg,
            accuracies={
                "pre_drift": acc_pre,
                "drifted": acc_drift,
                "aligned": acc_aligned,
            },
            energy_stats={
                "mean_in": float(e_in.mean()),
                "mean_out": float(e_out.mean()),
                "mean_before_align": float(e_before.mean()),
                "mean_after_align": float(e_after.mean()),
            },
            scatter_before=scatter_before,
            scatter_after=scatter_after,
            scatter_classes=np.asarray(y1)[sub].astype(np.int64),
            scatter_tasks=np.full(rows, task1_test.task_id, dtype=np.int64),
            energy_trace=trace,
            dim_delta=dim_delta,
            stage_seconds=timings,
        )
    return report


def run_eli_experiment(cfg: ExperimentConfig, streams=None, stage_hook=None) -> AlignmentReport:
    """The whole story in one call: fit the pipeline, then report on it."""
    state = fit_pipeline(cfg, streams=streams, stage_hook=stage_hook)
    return report_pipeline(state, stage_hook=stage_hook)
