import csv

import numpy as np
import pytest

from rectlab.cli import main, read_config
from rectlab.net import load_checkpoint
from rectlab.pairs import load_pairs
from rectlab.solver import UsageError

TINY = ("iterations=40\nrect_iterations=40\nphased_iterations=40\ncd_iterations=20\n"
        "n_data=500\nn_pairs=200\npool_size=200\nn_eval=128\nn_paths=8\nhidden_width=16\n"
        "hidden_layers=2\nbatch_size=32\n")


def rows(path):
    return list(csv.reader(open(path)))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny")
    (d / "tiny.cfg").write_text(TINY)
    assert main(["pipeline", "--config", str(d / "tiny.cfg"), "--out", str(d / "out"),
                 "--stages", "base,pairs,rectify,phased,cd", "--phases", "M=2"]) == 0
    return d


def test_trajectories_outputs(tmp_path, capsys):
    assert main(["trajectories", "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["traj_edm.csv", "traj_fm.csv", "traj_subvp.csv", "traj_vp.csv",
                     "trajectories.svg", "transformed.csv"]
    fm = rows(tmp_path / "traj_fm.csv")
    assert fm[0] == ["t", "x0", "x1", "y0", "y1"]
    mid = [r for r in fm[1:] if float(r[0]) == 0.5]
    assert len(mid) == 1 and [float(v) for v in mid[0][1:3]] == [0.5, 1.0]
    assert (tmp_path / "trajectories.svg").read_text().startswith("<svg")
    assert "PASS" in capsys.readouterr().out


def test_trajectories_schedule_subset(tmp_path):
    assert main(["trajectories", "--out", str(tmp_path), "--schedule", "vp"]) == 0
    assert (tmp_path / "traj_vp.csv").exists() and not (tmp_path / "traj_fm.csv").exists()


def test_theorem_check(tmp_path):
    assert main(["theorem-check", "--out", str(tmp_path / "a")]) == 0
    assert main(["theorem-check", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "theorem_check.csv").read_bytes()
    assert a == (tmp_path / "b" / "theorem_check.csv").read_bytes()
    table = rows(tmp_path / "a" / "theorem_check.csv")
    assert table[0] == ["schedule", "check", "statistic", "threshold", "passed"]
    assert all(r[4] == "1" for r in table[1:])


def test_pipeline_missing_stage_is_usage_error(tmp_path, capsys):
    assert main(["pipeline", "--stages", "cd", "--out", str(tmp_path)]) == 2
    assert "stage 'base'" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    (tmp_path / "bad.cfg").write_text("iterations=3\nwarp_speed=9\n")
    with pytest.raises(UsageError, match="warp_speed"):
        read_config(tmp_path / "bad.cfg")
    assert main(["theorem-check", "--config", str(tmp_path / "bad.cfg")]) == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["sample", "--frobnicate", "3"])
    assert e.value.code == 2


def test_missing_checkpoint_is_usage_error(tmp_path):
    assert main(["sample", "--out", str(tmp_path)]) == 2
    assert main(["sample", "--checkpoint", str(tmp_path / "nope.rdnet"), "--out", str(tmp_path)]) == 2


def test_pipeline_writes_stage_outputs(tiny_run):
    out = tiny_run / "out"
    for stage in ("base", "rect", "phased", "cd"):
        assert (out / f"{stage}.rdnet").exists()
    assert (out / "pairs.rdpair").exists()
    summary = rows(out / "metrics.csv")
    assert "sw2_1" in summary[0]
    assert [r[summary[0].index("stage")] for r in summary[1:]] == ["base", "rectify", "phased", "cd"]
    _, meta = load_checkpoint(out / "phased.rdnet")
    assert meta["schedule"].startswith("vp")


def test_pipeline_reuses_earlier_stages(tiny_run):
    before = (tiny_run / "out" / "rect.rdnet").read_bytes()
    assert main(["pipeline", "--config", str(tiny_run / "tiny.cfg"), "--out", str(tiny_run / "out"),
                 "--stages", "cd"]) == 0
    assert (tiny_run / "out" / "rect.rdnet").read_bytes() == before


def test_sample_metrics_and_collect_pairs(tiny_run, tmp_path):
    ckpt = str(tiny_run / "out" / "base.rdnet")
    assert main(["sample", "--checkpoint", ckpt, "--steps", "4", "--out", str(tmp_path),
                 "--config", str(tiny_run / "tiny.cfg")]) == 0
    samples = np.loadtxt(tmp_path / "samples.csv", delimiter=",", skiprows=1)
    assert samples.shape == (4096, 2) and np.all(np.isfinite(samples))
    assert main(["metrics", "--checkpoint", ckpt, "--out", str(tmp_path),
                 "--config", str(tiny_run / "tiny.cfg")]) == 0
    header = rows(tmp_path / "metrics.csv")[0]
    assert {"eps_constancy", "consistency_gap", "straightness_raw"} <= set(header)
    assert main(["collect-pairs", "--checkpoint", ckpt, "--steps", "8", "--out", str(tmp_path),
                 "--config", str(tiny_run / "tiny.cfg")]) == 0
    ds = load_pairs(tmp_path / "pairs.rdpair")
    assert len(ds) == 200 and ds.teacher_steps == 8


def test_phased_checkpoint_cannot_teach_pairs(tiny_run, tmp_path):
    ckpt = str(tiny_run / "out" / "phased.rdnet")
    assert main(["collect-pairs", "--checkpoint", ckpt, "--out", str(tmp_path)]) == 2
    # but it samples fine with its stored plan
    assert main(["sample", "--checkpoint", ckpt, "--steps", "2", "--out", str(tmp_path),
                 "--config", str(tiny_run / "tiny.cfg")]) == 0
