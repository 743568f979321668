import json
import subprocess
import sys

import numpy as np
import pytest

from forestagb.cli import main
from forestagb.grid import read_grid
from forestagb.learners import load_model
from forestagb.reference import TrainingTable

from .test_pipeline import TINY


@pytest.fixture(scope="module")
def table_csv(world_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "direct.csv"
    assert main(["assemble", "--records", str(world_dir / "plots.csv"), "--stack-dir", str(world_dir / "stacks"),
                 "--schema", str(world_dir / "schema.json"), "--out", str(out)]) == 0
    return out


def test_version_and_module_entry():
    r = subprocess.run([sys.executable, "-m", "forestagb", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("forestagb ")


def test_usage_error_is_2(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["train", "--bogus"])
    assert ei.value.code == 2


def test_config_error_is_2(tmp_path, table_csv, capsys):
    assert main(["run"]) == 2
    assert main(["train", "--table", str(table_csv), "--kind", "rf", "--params", "{bad", "--out",
                 str(tmp_path / "m.json")]) == 2
    assert main(["train", "--table", str(table_csv), "--kind", "rf", "--params", '{"min_node_size": 0}',
                 "--out", str(tmp_path / "m.json")]) == 2
    assert "error:" in capsys.readouterr().err


def test_data_error_is_3(tmp_path, world_dir, capsys):
    rc = main(["predict", "--model", str(tmp_path / "missing.json"), "--stack-dir", str(world_dir / "stacks"),
               "--schema", str(world_dir / "schema.json"), "--year", "2014", "--out", str(tmp_path / "s")])
    assert rc == 3
    assert main(["diff", "--surface-dir", str(world_dir / "truth"), "--a", "1990", "--b", "2014",
                 "--out", str(tmp_path / "d")]) == 3


def test_numeric_error_is_4(tmp_path, table_csv):
    comps = json.dumps([{"kind": "rf", "params": {"num_trees": 3, "seed": 1}},
                        {"kind": "rf", "params": {"num_trees": 3, "seed": 1}}])
    assert main(["train", "--table", str(table_csv), "--components", comps, "--out", str(tmp_path / "e.json")]) == 4


def test_train_predict_mask_chain(tmp_path, world_dir, table_csv):
    comps = tmp_path / "comps.json"
    comps.write_text(json.dumps(TINY["direct"]["components"]))
    model = tmp_path / "direct.json"
    assert main(["--threads", "2", "train", "--table", str(table_csv), "--components", f"@{comps}",
                 "--holdout", "5", "--out", str(model)]) == 0
    m = load_model(model)
    t = TrainingTable.read_csv(table_csv)
    assert m.predict(t).shape == (t.n,)
    surf = tmp_path / "agb_2014"
    assert main(["predict", "--model", str(model), "--stack-dir", str(world_dir / "stacks"),
                 "--schema", str(world_dir / "schema.json"), "--year", "2014", "--out", str(surf)]) == 0
    masked = tmp_path / "masked"
    assert main(["mask", "--surface", str(surf), "--lcmap", str(world_dir / "lcmap" / "lcmap_2014"),
                 "--out", str(masked)]) == 0
    cls = read_grid(world_dir / "lcmap" / "lcmap_2014").values
    g = read_grid(masked)
    assert not g.valid[~np.isin(cls, (3, 4, 6))].any()


def test_assess_and_report_on_truth(tmp_path, world_dir):
    out = tmp_path / "assess"
    assert main(["assess", "--plots", str(world_dir / "plots.csv"), "--surface-dir", str(world_dir / "truth"),
                 "--lcmap-dir", str(world_dir / "lcmap"), "--scales", "5000,10000", "--boot-iters", "10",
                 "--out-dir", str(out)]) == 0
    assert (out / "agreement_pairs.csv").exists()
    figs = tmp_path / "figs"
    assert main(["report", "--pairs", str(out / "agreement_pairs.csv"), "--out-dir", str(figs),
                 "--scales", "plot:pixel,10km", "--cap", "300"]) == 0
    assert sorted(p.name for p in figs.iterdir()) == ["scatter_ensemble_10km.svg",
                                                       "scatter_ensemble_plot-pixel.svg"]


def test_run_with_config_file(tmp_path, world_dir):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"world_dir": str(world_dir), "out_dir": "out", **TINY, "approach": "direct"}))
    assert main(["run", "--config", str(cfg), "--boot-iters", "0"]) == 0
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "complete" and man["config"]["approach"] == "direct"
    assert man["config"]["boot_iters"] == 0
