import csv
import json

import pytest

from lpo.cli import main, parse_seeds
from lpo.driver import ConfigError, METRIC_COLUMNS
from lpo.mdp import chain
from lpo.mdpfile import save_mdp

SMALL = """
[env]
generator = chain
length = 4

[lpo]
N = 12
K = 3
M = 10
C_mult = 0.05
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def test_parse_seeds():
    assert parse_seeds("0,1,5-7") == [0, 1, 5, 6, 7]
    with pytest.raises(ConfigError):
        parse_seeds("1,1")


def test_run_writes_outputs(config, tmp_path):
    out = tmp_path / "runs"
    assert main(["run", "--config", str(config), "--seeds", "0-1", "--out", str(out)]) == 0
    for seed in (0, 1):
        with open(out / f"metrics_seed{seed}.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == METRIC_COLUMNS and len(rows) == 12
        summary = json.loads((out / f"summary_seed{seed}.json").read_text())
        assert summary["env"] == {"generator": "chain", "length": 4}
        assert summary["config"]["seed"] == seed
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["seeds"] == [0, 1] and len(agg["final_values"]) == 2


def test_rerun_is_byte_identical(config, tmp_path):
    for d in ("a", "b"):
        main(["run", "--config", str(config), "--seeds", "3", "--out", str(tmp_path / d)])
    a = (tmp_path / "a" / "metrics_seed3.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics_seed3.csv").read_bytes()


def test_mdp_file_env(tmp_path):
    save_mdp(tmp_path / "c.mdp", chain(3))
    cfg = tmp_path / "f.ini"
    cfg.write_text("[env]\nfile = c.mdp\n[lpo]\nN = 3\nK = 2\nM = 5\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "metrics_seed0.csv").exists()


@pytest.mark.parametrize("text", [
    "[env]\ngenerator = chain\nlength = 4\n[lpo]\nN = 0\n",
    "[env]\ngenerator = torus\n",
    "[env]\ngenerator = chain\nlength = 4\nwidth = 3\n",
    "[env]\ngenerator = chain\nlength = 4\n[extra]\nx = 1\n",
    "[lpo]\nN = 3\n",
    "[env]\ngenerator = chain\nlength = 4\n[lpo]\nspeed = 3\n",
])
def test_invalid_config_exit_code(tmp_path, text, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_check_and_plotdata(tmp_path):
    cfg = tmp_path / "exact.ini"
    cfg.write_text("[env]\ngenerator = chain\nlength = 4\n[lpo]\nN = 20\nK = 4\nM = 1\n"
                   "mode = exact\nC_mult = 0.01\nbeta = 0.9\nc_epsilon = 0.05\n")
    out = tmp_path / "runs"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--save-artifacts"]) == 0
    report = tmp_path / "report.json"
    code = main(["check", "--artifacts", str(out / "artifacts_seed0.npz"),
                 "--checker", "one-sided-error", "--out", str(report)])
    reps = json.loads(report.read_text())
    assert code == 0 and reps[0]["lemma_id"] == "one-sided-error" and reps[0]["passed"]
    code = main(["check", "--artifacts", str(out / "artifacts_seed0.npz"),
                 "--checker", "lemma-structure", "--out", str(report)])
    assert code == 0 and len(json.loads(report.read_text())) == 3
    plot = tmp_path / "plot.csv"
    assert main(["plotdata", "--runs", str(out), "--out", str(plot)]) == 0
    with open(plot) as fh:
        rows = list(csv.DictReader(fh))
    assert {r["series"] for r in rows} == {"switches:seed0", "value:seed0"}
    assert len(rows) == 40


def test_one_sided_check_rejects_mc_artifacts(config, tmp_path):
    out = tmp_path / "runs"
    main(["run", "--config", str(config), "--out", str(out), "--save-artifacts"])
    code = main(["check", "--artifacts", str(out / "artifacts_seed0.npz"),
                 "--checker", "one-sided-error"])
    assert code == 2


def test_variant_override(config, tmp_path):
    out = tmp_path / "runs"
    main(["run", "--config", str(config), "--out", str(out), "--variant", "no-bonus"])
    summary = json.loads((out / "summary_seed0.json").read_text())
    assert summary["config"]["variant"] == "no-bonus"


def test_config_artifacts_flag_and_missing_file(tmp_path):
    cfg = tmp_path / "art.ini"
    cfg.write_text("[env]\ngenerator = chain\nlength = 3\n[lpo]\nN = 5\nK = 2\nM = 1\n"
                   "mode = exact\nrecord_artifacts = true\n")
    out = tmp_path / "runs"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "artifacts_seed0.npz").exists()
    assert main(["check", "--artifacts", str(tmp_path / "missing.npz")]) == 2
