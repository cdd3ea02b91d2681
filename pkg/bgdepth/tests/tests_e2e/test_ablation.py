import pytest
import structlog

from bgdepth.exceptions import IncompatibleCheckpointError
from bgdepth.metrics.report import render_tsv
from bgdepth.models.fusion import ABLATION_MODES
from bgdepth.pipeline.config import TrainConfig
from bgdepth.pipeline.synth import synth_dataset
from bgdepth.tasks.commands.run_ablation import ABLATION_REPORT, run_ablation
from bgdepth.tests.common.constants import TINY_FUSION, TINY_SYNTH

DESK_SYNTH = {"count": 8, "test_count": 8, "width": 64, "height": 64, "n_objects": 3}


@pytest.mark.slow
def test_ablation_reports_every_variant(tmp_path):
    cfg = TrainConfig(model=TINY_FUSION, max_steps=3, batch_size=2, optimizer={"lr": 1e-2}, synth=TINY_SYNTH)
    reports = run_ablation(cfg, synth_dataset(cfg.synth, "train"), synth_dataset(cfg.synth, "test"), tmp_path)

    assert list(reports) == [mode.display_name for mode in ABLATION_MODES]
    assert list(reports) == ["Geometry+Seg+Edge", "RGB+Seg+Edge", "RGB+Seg", "RGB+Edge"]
    for name, report in reports.items():
        assert report.sample_id == name
        assert report.n_valid == 2 * 16 * 16
        assert 0.0 <= report.derm <= 1.0
    for mode in ABLATION_MODES:
        assert (tmp_path / mode.name / "checkpoint.bgdc").is_file()
    assert (tmp_path / ABLATION_REPORT).read_text() == render_tsv(reports.values(), label="mode")


def test_failed_variant_unbinds_its_log_context(tmp_path):
    cfg = TrainConfig(model=TINY_FUSION, max_steps=1, batch_size=2, synth=TINY_SYNTH)
    wrong_size = TrainConfig(synth={**TINY_SYNTH, "width": 32, "height": 32}).synth
    with pytest.raises(IncompatibleCheckpointError):
        run_ablation(cfg, synth_dataset(cfg.synth, "train"), synth_dataset(wrong_size, "test"), tmp_path)
    assert "mode" not in structlog.contextvars.get_contextvars()


@pytest.mark.slow
def test_geometry_channel_gives_the_most_reliable_depth_edges(tmp_path):
    cfg = TrainConfig(
        model={"kind": "bgunet", "image_width": 64, "image_height": 64},
        optimizer={"lr": 3e-3},
        epochs=400,
        max_steps=400,
        batch_size=4,
        synth=DESK_SYNTH,
    )
    reports = run_ablation(cfg, synth_dataset(cfg.synth, "train"), synth_dataset(cfg.synth, "test"), tmp_path)

    full = reports["Geometry+Seg+Edge"]
    for name in ("RGB+Seg+Edge", "RGB+Seg", "RGB+Edge"):
        assert full.derm >= reports[name].derm, f"{name} beat the geometry variant on DERM"


@pytest.mark.slow
def test_gradient_check_command_passes(capsys):
    from bgdepth.main import main

    assert main(["gradcheck"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert all(float(row.split("\t")[1]) <= 1e-5 for row in rows)
