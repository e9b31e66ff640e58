import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidattn.binio import FormatError
from vidattn.datagen import VideoDataset
from vidattn.networks import ModelSpec, build_backbone
from vidattn.plots import plot_curves, plot_report
from vidattn.report import EvalReport, check_complete, run_table
from vidattn.training import TrainConfig


def sample_report():
    rep = EvalReport()
    rep.add("lenet", "both", 1.234567, 55.5, 3)
    rep.add("dcn", "both", 0.75, 71.25, 3)
    rep.add("stn", "normal", 0.1, 99.0, 1)
    return rep


def test_tsv_round_trip():
    rep = sample_report()
    text = rep.to_tsv()
    assert text.splitlines()[0] == "mode\tmodel\tloss\taccuracy\trepetitions"
    assert "Rotation+Scaling\tDCN-LSTM\t0.75\t71.25\t3" in text
    assert EvalReport.from_tsv(text) == rep


def test_binary_round_trip(tmp_path):
    rep = sample_report()
    rep.save(tmp_path / "r.atvc")
    assert EvalReport.load(tmp_path / "r.atvc") == rep
    assert "report.both.dcn.accuracy" in rep.to_tensors()


@given(st.floats(0, 50, allow_nan=False), st.floats(0, 100, allow_nan=False), st.integers(1, 300))
@settings(max_examples=50, deadline=None)
def test_text_and_binary_forms_agree(loss, acc, reps):
    rep = EvalReport()
    rep.add("stn", "rotation", loss, acc, reps)
    assert EvalReport.from_tsv(rep.to_tsv()) == EvalReport.from_tensors(rep.to_tensors()) == rep


def test_plain_text_grid():
    text = sample_report().to_text()
    lines = text.splitlines()
    assert "LeNet-LSTM" in lines[0] and "DCN-LSTM" in lines[0]
    assert lines[1].startswith("Normal") and lines[2].startswith("Rotation+Scaling")
    assert "0.750 / 71.25%" in lines[2]
    assert "1, 3 repetition" in lines[-1]


def test_cell_validation():
    rep = EvalReport()
    with pytest.raises(ValueError, match="variant"):
        rep.add("vgg", "both", 1, 50, 3)
    with pytest.raises(ValueError, match="mode"):
        rep.add("dcn", "shear", 1, 50, 3)
    with pytest.raises(ValueError, match="outside"):
        rep.add("dcn", "both", 1, 101, 3)
    with pytest.raises(ValueError, match="repetition"):
        rep.add("dcn", "both", 1, 50, 0)


def test_malformed_inputs():
    with pytest.raises(FormatError, match="header"):
        EvalReport.from_tsv("loss\taccuracy\n")
    with pytest.raises(FormatError, match="line 2"):
        EvalReport.from_tsv("mode\tmodel\tloss\taccuracy\trepetitions\nNormal\tVGG\t1\t2\t3\n")
    with pytest.raises(FormatError, match="unexpected tensor"):
        EvalReport.from_tensors({"conv1.w": np.zeros(1)})
    with pytest.raises(FormatError, match="missing"):
        EvalReport.from_tensors({"report.both.dcn.loss": np.zeros(1)})


def test_incomplete_grid_lists_gaps():
    with pytest.raises(ValueError) as err:
        check_complete({"lenet": 1}, {"both": 1})
    msg = str(err.value)
    for gap in ("stn", "dcn", "normal", "rotation", "scaling"):
        assert gap in msg
    assert "lenet" not in msg.split("missing:")[1]


def test_run_table_partial_and_figures(tmp_path):
    rng = np.random.default_rng(0)
    ds = VideoDataset((rng.random((100, 2, 64, 64)) * 255).astype(np.uint8), np.arange(100, dtype=np.uint8))
    backbone = build_backbone(ModelSpec.reduced("lenet"), rng)
    cfg = TrainConfig.video_defaults(epochs=1, repetitions=1)
    with pytest.raises(ValueError, match="incomplete"):
        run_table({"lenet": backbone}, {"normal": (ds, ds)}, cfg)
    rep, results = run_table({"lenet": backbone}, {"normal": (ds, ds)}, cfg, complete=False)
    assert list(rep.cells) == [("lenet", "normal")]
    assert rep.get("lenet", "normal").repetitions == 1
    assert results[("lenet", "normal")].curves.shape == (1, 1)
    plot_report(rep, tmp_path / "a.png")
    plot_report(rep, tmp_path / "b.png")
    plot_curves({"LeNet-LSTM": results[("lenet", "normal")].curves}, tmp_path / "c.png")
    assert (tmp_path / "a.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
