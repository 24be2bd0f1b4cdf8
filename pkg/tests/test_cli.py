import json
import subprocess
import sys

import numpy as np
import pytest

from imprecise_em import cli
from imprecise_em import labels as L
from imprecise_em.trainer import read_metrics

SMALL = ["--C", "3", "--D", "4", "--n-train", "60", "--n-test", "30", "--epochs", "2"]


def _run(argv):
    return cli.main(argv)


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "r"
    assert _run(["run", "--task", "mixed", "--labels", "30", *SMALL, "--seeds", "1,2",
                 "--out", str(out)]) == 0
    assert (out / "manifest.json").exists()
    agg = json.loads((out / "aggregate.json").read_text())
    assert len(agg["accuracy_per_seed"]) == 2
    assert "transition_tv_mean" in agg
    for s in (1, 2):
        d = out / f"seed_{s}"
        assert sorted(p.name for p in d.iterdir()) == ["metrics.csv", "model.json",
                                                        "transition.json"]
        assert len(read_metrics(d / "metrics.csv")) == 2


def test_supervised_has_no_transition(tmp_path):
    out = tmp_path / "r"
    assert _run(["run", *SMALL, "--seeds", "4", "--out", str(out)]) == 0
    assert not (out / "seed_4" / "transition.json").exists()


def test_rerun_from_manifest_is_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["run", "--task", "nll", "--eta", "0.3", *SMALL, "--seeds", "5",
                 "--out", str(a)]) == 0
    assert _run(["run", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("metrics.csv", "model.json", "transition.json"):
        assert (a / "seed_5" / name).read_bytes() == (b / "seed_5" / name).read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("# comment\ntask = pll\nq = 0.2\nepochs = 7\n")
    args = cli.build_parser().parse_args(["run", "--config", str(conf), "--epochs", "3"])
    s = cli.resolve(args)
    assert (s["task"], s["q"], s["epochs"]) == ("pll", 0.2, 3)


@pytest.mark.parametrize("argv", [
    ["run", "--task", "pll", "--q", "1.5"],
    ["run", "--task", "ssl", "--labels", "41"],
    ["run", "--n-train", "101"],
    ["run", "--seeds", ""],
    ["run", "--task", "bogus"],
    ["sweep", "--task", "pll"],
])
def test_bad_arguments_exit_2(argv, tmp_path):
    with pytest.raises(SystemExit) as err:
        _run([*argv, "--out", str(tmp_path)])
    assert err.value.code == 2


def test_unknown_config_key_exits_2(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("colour = blue\n")
    with pytest.raises(SystemExit) as err:
        _run(["run", "--config", str(conf)])
    assert err.value.code == 2


def test_bad_data_file_exits_1(tmp_path):
    bad = tmp_path / "d.csv"
    bad.write_text("f0,kind,label,candidates,true_label\n0.1,weird,,,0\n")
    assert _run(["run", "--data", str(bad), "--epochs", "1", "--out", str(tmp_path / "o")]) == 1


def test_run_on_data_file(tmp_path):
    base = L.make_blobs(30, C=3, D=3, seed=0)
    L.write_dataset(L.make_partial(base, 0.3, 1), tmp_path / "d.csv")
    out = tmp_path / "o"
    assert _run(["run", "--task", "pll", "--data", str(tmp_path / "d.csv"), "--epochs", "1",
                 "--seeds", "1", "--out", str(out)]) == 0
    model = json.loads((out / "seed_1" / "model.json").read_text())
    assert model["evaluated_on"] == "train_true_labels"


def test_sweep_small_grid(tmp_path):
    out = tmp_path / "s"
    assert _run(["sweep", *SMALL, "--seeds", "1", "--grid-l", "30,60", "--grid-q", "0.1,0.3",
                 "--grid-eta", "0,0.2", "--out", str(out)]) == 0
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0] == "l,q,acc_eta=0,acc_eta=0.2,std_eta=0,std_eta=0.2"
    assert len(lines) == 5
    assert len([p for p in out.iterdir() if p.is_dir()]) == 8
    assert (out / "l30_q0.1_eta0.2" / "seed_1" / "metrics.csv").exists()


def test_check_trend():
    etas = [0.0, 0.1]
    assert cli.check_trend({(1, 0.1): [(0.8, 0.01), (0.79, 0.01)]}, etas) == []
    fails = cli.check_trend({(1, 0.1): [(0.8, 0.01), (0.85, 0.01)]}, etas)
    assert len(fails) == 1 and fails[0]["eta_to"] == 0.1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "imprecise_em", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == cli.__version__
