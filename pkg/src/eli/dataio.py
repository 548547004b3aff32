"""Dataset files, checkpoints, and deterministic report export.

Report data files are byte-stable: two runs with the same config and seed
write identical CSV/JSON bytes. Anything time-dependent (timestamps, stage
wall-clock) lives in a single `metadata` block of report.json and nowhere
else, so determinism checks simply drop that block.
"""
from __future__ import annotations

import gzip
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import Layer, MlpParams, ShapeError

CHECKPOINT_MAGIC = "eli-checkpoint"
CHECKPOINT_VERSION = 1
REPORT_VERSION = 1


class FormatError(ValueError):
    """A file does not conform to its declared on-disk format."""


class DataError(ValueError):
    """Dataset contents fail an integrity check (counts, pairing, ranges)."""


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

@dataclass
class IdxFile:
    magic: bytes
    dims: tuple[int, ...]
    payload: np.ndarray  # uint8, already reshaped to dims

    @property
    def rank(self) -> int:
        return len(self.dims)


def _open_maybe_gzip(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path: str | Path) -> IdxFile:
    """Parse one IDX file (plain or .gz).

    Layout: 4 magic bytes (0, 0, 0x08 for unsigned bytes, rank), then rank
    big-endian uint32 dims, then exactly prod(dims) payload bytes. Reads stop
    at the declared payload length; trailing bytes are ignored. Short files,
    wrong magic, and short payloads raise FormatError naming the path.
    """
    path = Path(path)
    with _open_maybe_gzip(path) as f:
        magic = f.read(4)
        if len(magic) < 4:
            raise FormatError(f"{path}: file too short for an IDX header ({len(magic)} bytes)")
        if magic[0] != 0 or magic[1] != 0:
            raise FormatError(f"{path}: bad magic prefix {magic[:2].hex()} (expected 0000)")
        if magic[2] != 0x08:
            raise FormatError(
                f"{path}: unsupported element type 0x{magic[2]:02x} (only unsigned byte, 0x08)"
            )
        rank = magic[3]
        if rank == 0:
            raise FormatError(f"{path}: zero-rank IDX file")
        dim_bytes = f.read(4 * rank)
        if len(dim_bytes) < 4 * rank:
            raise FormatError(f"{path}: truncated header (expected {rank} dims)")
        dims = struct.unpack(f">{rank}I", dim_bytes)
        expected = 1
        for d in dims:
            expected *= d
        data = f.read(expected)
        if len(data) != expected:
            raise FormatError(
                f"{path}: truncated payload (expected {expected} bytes, got {len(data)})"
            )
    payload = np.frombuffer(data, dtype=np.uint8).reshape(dims)
    return IdxFile(magic=bytes(magic), dims=tuple(int(d) for d in dims), payload=payload)


def find_idx_file(root: Path, stem: str) -> Path:
    """Locate `stem` or `stem.gz` under root; FileNotFoundError otherwise."""
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no {stem} or {stem}.gz under {root}")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _params_to_arrays(prefix: str, params: MlpParams, arrays: dict, meta: dict) -> None:
    meta[prefix] = {"activations": [l.activation for l in params.layers]}
    for i, layer in enumerate(params.layers):
        arrays[f"{prefix}/{i}/weight"] = layer.weight
        arrays[f"{prefix}/{i}/bias"] = layer.bias


def _params_from_arrays(prefix: str, arrays, meta: dict) -> MlpParams:
    acts = meta[prefix]["activations"]
    layers = []
    for i, act in enumerate(acts):
        layers.append(Layer(arrays[f"{prefix}/{i}/weight"], arrays[f"{prefix}/{i}/bias"], act))
    return MlpParams(layers)


def save_checkpoint(model, path: str | Path, config: dict | None = None) -> None:
    """Serialize an energy model or a classifier to an .npz container.

    Arrays round-trip bitwise (float64 throughout). A JSON meta entry records
    the format magic, version, model kind, and an optional config echo.
    """
    from .continuum import ClassifierModel
    from .ebm import EnergyModel

    arrays: dict[str, np.ndarray] = {}
    meta: dict = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": config,
    }
    if isinstance(model, EnergyModel):
        meta["kind"] = "energy"
        meta["ema_decay"] = model.ema.decay
        _params_to_arrays("net", model.net, arrays, meta)
        _params_to_arrays("ema", model.ema.shadow, arrays, meta)
    elif isinstance(model, ClassifierModel):
        meta["kind"] = "classifier"
        meta["class_set"] = [int(c) for c in model.class_set]
        _params_to_arrays("backbone", model.backbone, arrays, meta)
        _params_to_arrays("head", model.head, arrays, meta)
    else:
        raise TypeError(f"cannot checkpoint object of type {type(model).__name__}")
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str | Path):
    """Inverse of save_checkpoint; returns (model, config_echo_or_None)."""
    from .continuum import ClassifierModel
    from .ebm import EnergyModel
    from .optim import EmaState

    path = Path(path)
    try:
        with np.load(path) as arrays:
            if "meta" not in arrays:
                raise FormatError(f"{path}: not a checkpoint (no meta entry)")
            meta = json.loads(bytes(arrays["meta"]).decode("utf-8"))
            if meta.get("magic") != CHECKPOINT_MAGIC:
                raise FormatError(f"{path}: bad checkpoint magic {meta.get('magic')!r}")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise FormatError(
                    f"{path}: checkpoint version {meta.get('version')} is not "
                    f"supported (expected {CHECKPOINT_VERSION})"
                )
            if meta["kind"] == "energy":
                net = _params_from_arrays("net", arrays, meta)
                shadow = _params_from_arrays("ema", arrays, meta)
                model = EnergyModel(net=net, ema=EmaState(decay=meta["ema_decay"], shadow=shadow))
            elif meta["kind"] == "classifier":
                model = ClassifierModel(
                    backbone=_params_from_arrays("backbone", arrays, meta),
                    head=_params_from_arrays("head", arrays, meta),
                    class_set=tuple(meta["class_set"]),
                )
            else:
                raise FormatError(f"{path}: unknown checkpoint kind {meta['kind']!r}")
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: unreadable checkpoint ({exc})") from exc
    return model, meta.get("config")


def config_hash(config: dict) -> str:
    """Stable hash of a config mapping (key order never matters)."""
    import hashlib

    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Report export
# ---------------------------------------------------------------------------

def sig6(x: float) -> str:
    """Fixed 6-significant-digit decimal rendering used in all data files."""
    return f"{float(x):.6g}"


def pca_2d(z: np.ndarray) -> np.ndarray:
    """Project rows of z onto their two leading principal axes.

    Plain SVD of the centered matrix; each component's sign is fixed so its
    largest-magnitude coordinate is positive, making the projection a pure
    function of the data.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2 or z.shape[0] < 2:
        raise ShapeError(f"need at least 2 rows and 2 columns, got shape {z.shape}")
    centered = z - z.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


@dataclass
class AlignmentReport:
    """Everything one experiment writes to disk.

    Scatter rows are 2-d PCA projections of a fixed latent subset before and
    after alignment (same projection for both). The energy trace covers the
    same subset; column `step` 0 is the pre-alignment energy. dim_delta holds
    the batch-mean per-dimension movement after each alignment step.
    """

    seed: int
    config: dict
    accuracies: dict  # pre_drift / drifted / aligned, fractions in [0, 1]
    energy_stats: dict  # mean_in / mean_out / mean_before_align / mean_after_align
    scatter_before: np.ndarray  # [rows, 2]
    scatter_after: np.ndarray  # [rows, 2]
    scatter_classes: np.ndarray  # [rows] int
    scatter_tasks: np.ndarray  # [rows] int
    energy_trace: np.ndarray  # [rows, steps + 1]
    dim_delta: np.ndarray  # [dim, steps]
    stage_seconds: dict = field(default_factory=dict)

REPORT_FILES = ("report.json", "latents_before.csv", "latents_after.csv",
                "energy_trace.csv", "dim_delta.csv")


def _write_text(path: Path, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines))
        f.write("\n")


def _scatter_lines(report: AlignmentReport, which: np.ndarray) -> list[str]:
    lines = ["x,y,class,task"]
    for i in range(which.shape[0]):
        lines.append(
            f"{sig6(which[i, 0])},{sig6(which[i, 1])},"
            f"{int(report.scatter_classes[i])},{int(report.scatter_tasks[i])}"
        )
    return lines


def write_report(report: AlignmentReport, out_dir: str | Path) -> dict[str, Path]:
    """Write the full report file set into out_dir (created if needed).

    Returns {filename: path}. All numbers are rendered at 6 significant
    digits; newlines are '\\n' on every platform; JSON keys are sorted. Only
    report.json's metadata block contains wall-clock values.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if report.scatter_before.shape != report.scatter_after.shape:
        raise ShapeError(
            f"scatter shapes differ: {report.scatter_before.shape} "
            f"vs {report.scatter_after.shape}"
        )

    paths = {name: out / name for name in REPORT_FILES}
    _write_text(paths["latents_before.csv"], _scatter_lines(report, report.scatter_before))
    _write_text(paths["latents_after.csv"], _scatter_lines(report, report.scatter_after))

    trace_lines = ["row,step,energy"]
    for r in range(report.energy_trace.shape[0]):
        for s in range(report.energy_trace.shape[1]):
            trace_lines.append(f"{r},{s},{sig6(report.energy_trace[r, s])}")
    _write_text(paths["energy_trace.csv"], trace_lines)

    delta_lines = ["dim,step,delta"]
    for d in range(report.dim_delta.shape[0]):
        for s in range(report.dim_delta.shape[1]):
            delta_lines.append(f"{d},{s + 1},{sig6(report.dim_delta[d, s])}")
    _write_text(paths["dim_delta.csv"], delta_lines)

    doc = {
        "format": "eli-report",
        "version": REPORT_VERSION,
        "seed": int(report.seed),
        "config": report.config,
        "config_hash": config_hash(report.config),
        "accuracies": {k: float(sig6(v)) for k, v in report.accuracies.items()},
        "energy": {k: float(sig6(v)) for k, v in report.energy_stats.items()},
        "files": {
            "latents_before": "latents_before.csv",
            "latents_after": "latents_after.csv",
            "energy_trace": "energy_trace.csv",
            "dim_delta": "dim_delta.csv",
        },
        "metadata": {
            "created_unix": time.time(),
            "stage_seconds": {k: round(float(v), 3) for k, v in report.stage_seconds.items()},
        },
    }
    with open(paths["report.json"], "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def read_report_summary(report_dir: str | Path) -> dict:
    """Parse report.json from a report directory (or a direct file path)."""
    p = Path(report_dir)
    if p.is_dir():
        p = p / "report.json"
    if not p.is_file():
        raise FileNotFoundError(f"no report.json at {p}")
    try:
        with open(p, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: malformed report JSON ({exc})") from exc
    if doc.get("format") != "eli-report":
        raise FormatError(f"{p}: not a report file (format={doc.get('format')!r})")
    return doc
