import json

import numpy as np
import pytest

from eli_plots import (
    SchemaError,
    figure_accuracy,
    figure_dim_delta,
    figure_scatter,
    load_report,
    main,
    render_report,
)

TRIPLET = {"pre_drift": 0.992, "drifted": 0.2088, "aligned": 0.8344}


def write_fixture(root, rows=128, steps=3, dims=6, empty_delta=False):
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    for name in ("latents_before.csv", "latents_after.csv"):
        lines = ["x,y,class,task"]
        coords = rng.normal(size=(rows, 2))
        for i in range(rows):
            lines.append(f"{coords[i, 0]:.6f},{coords[i, 1]:.6f},{i % 5},1")
        (root / name).write_text("\n".join(lines) + "\n")

    lines = ["row,step,energy"]
    for row in range(rows):
        for step in range(steps + 1):
            lines.append(f"{row},{step},{rng.normal():.6f}")
    (root / "energy_trace.csv").write_text("\n".join(lines) + "\n")

    lines = ["dim,step,delta"]
    if not empty_delta:
        for dim in range(dims):
            for step in range(1, steps + 1):
                lines.append(f"{dim},{step},{rng.normal():.6f}")
    (root / "dim_delta.csv").write_text("\n".join(lines) + "\n")

    (root / "report.json").write_text(json.dumps({
        "format": "eli-report",
        "version": 1,
        "seed": 7,
        "accuracies": TRIPLET,
        "config": {"dataset": "mnist"},
        "files": {
            "latents_before": "latents_before.csv",
            "latents_after": "latents_after.csv",
            "energy_trace": "energy_trace.csv",
            "dim_delta": "dim_delta.csv",
        },
        "metadata": {"created_unix": 0},
    }))
    return root


def test_render_emits_four_figures(tmp_path):
    report = write_fixture(tmp_path / "rep")
    out = tmp_path / "figs"
    written = render_report(report, out_dir=out)
    assert sorted(p.name for p in written) == [
        "accuracy.png", "dim_delta.png", "energy_trace.png", "latents.png",
    ]
    for path in written:
        assert path.stat().st_size > 0


def test_scatter_point_counts_match_csv(tmp_path):
    report = write_fixture(tmp_path / "rep", rows=128)
    fig = figure_scatter(load_report(report))
    panels = [ax for ax in fig.axes if ax.collections]
    counts = [ax.collections[0].get_offsets().shape[0] for ax in panels[:2]]
    assert counts == [128, 128]


def test_accuracy_bars_match_triplet(tmp_path):
    report = write_fixture(tmp_path / "rep")
    fig = figure_accuracy(load_report(report))
    ax = fig.axes[0]
    heights = [patch.get_height() for patch in ax.patches]
    assert heights == pytest.approx([99.2, 20.88, 83.44])
    labels = [tick.get_text() for tick in ax.get_xticklabels()]
    assert labels == ["pre-drift", "drifted", "aligned"]


def test_missing_column_is_named(tmp_path):
    report = write_fixture(tmp_path / "rep")
    body = (report / "latents_before.csv").read_text().splitlines()
    stripped = ["x,y,task"] + [",".join(np.array(line.split(","))[[0, 1, 3]])
                               for line in body[1:]]
    (report / "latents_before.csv").write_text("\n".join(stripped) + "\n")
    with pytest.raises(SchemaError, match="latents_before.csv.*'class'"):
        load_report(report)


def test_empty_dim_delta_skips_heatmap(tmp_path, capsys):
    report = write_fixture(tmp_path / "rep", empty_delta=True)
    written = render_report(report, out_dir=tmp_path / "figs")
    names = sorted(p.name for p in written)
    assert names == ["accuracy.png", "energy_trace.png", "latents.png"]
    assert "dim_delta" in capsys.readouterr().err
    assert figure_dim_delta(load_report(report)) is None


def test_malformed_value_is_located(tmp_path):
    report = write_fixture(tmp_path / "rep")
    path = report / "energy_trace.csv"
    lines = path.read_text().splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0] + ",not-a-number"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match="energy_trace.csv:4"):
        load_report(report)


def test_report_json_checks(tmp_path):
    report = write_fixture(tmp_path / "rep")
    (report / "report.json").write_text('{"format": "other"}')
    with pytest.raises(SchemaError, match="eli-report"):
        load_report(report)
    (report / "report.json").unlink()
    with pytest.raises(SchemaError, match="report.json"):
        load_report(report)


def test_missing_csv_file(tmp_path):
    report = write_fixture(tmp_path / "rep")
    (report / "dim_delta.csv").unlink()
    with pytest.raises(SchemaError, match="dim_delta.csv"):
        load_report(report)


def test_cli_roundtrip(tmp_path, capsys):
    report = write_fixture(tmp_path / "rep")
    assert main([str(report), "--out", str(tmp_path / "f"), "--format", "svg"]) == 0
    out_lines = capsys.readouterr().out.splitlines()
    assert len(out_lines) == 4
    assert all(line.endswith(".svg") for line in out_lines)


def test_cli_default_out_inside_report(tmp_path):
    report = write_fixture(tmp_path / "rep")
    assert main([str(report)]) == 0
    assert (report / "figures" / "accuracy.png").is_file()


def test_cli_missing_report_dir(tmp_path, capsys):
    assert main([str(tmp_path / "ghost")]) == 1
    assert "report.json" in capsys.readouterr().err


def test_rendering_reads_but_never_modifies_inputs(tmp_path):
    report = write_fixture(tmp_path / "rep")
    before = {p.name: p.read_bytes() for p in report.iterdir() if p.is_file()}
    render_report(report, out_dir=tmp_path / "f1")
    after = {p.name: p.read_bytes() for p in report.iterdir() if p.is_file()}
    assert before == after


def test_rerender_is_byte_stable(tmp_path):
    report = write_fixture(tmp_path / "rep")
    first = render_report(report, out_dir=tmp_path / "f1")
    second = render_report(report, out_dir=tmp_path / "f2")
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes(), a.name
