import json
import subprocess
import sys

import pytest

from pbadapt import cli

from test_experiments import small_config


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(small_config(theorems=("thm31", "thm52"), seeds=(0,)).to_dict()))
    return p


class TestVerbs:
    def test_oracle_check(self, tmp_path, capsys):
        assert cli.main(["oracle-check", "--instances", "5", "--out", str(tmp_path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["ok"] and (tmp_path / "oracle_summary.json").exists()

    def test_oracle_check_failure_exit(self, tmp_path, monkeypatch):
        monkeypatch.setattr(cli, "run_oracle_check", lambda n, seed: {"ok": False})
        assert cli.main(["oracle-check", "--out", str(tmp_path)]) == 1

    def test_bound(self, config_file, tmp_path, capsys):
        assert cli.main(["bound", "--config", str(config_file), "--out", str(tmp_path)]) == 0
        assert "4 cells, 0 failed" in capsys.readouterr().out
        assert (tmp_path / "summary.csv").exists()

    def test_rank(self, config_file, tmp_path, capsys):
        assert cli.main(["rank", "--config", str(config_file), "--out", str(tmp_path)]) == 0
        # two cells are too few for a correlation; the run still writes its outputs
        assert "caveat: fewer than three" in capsys.readouterr().out
        assert (tmp_path / "ranking.csv").exists() and (tmp_path / "ranking.json").exists()

    def test_flatness(self, config_file, tmp_path):
        assert cli.main(["flatness", "--config", str(config_file), "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "flatness.json").read_text())
        assert doc["median_rho_source"] >= 0

    def test_config_error_exit(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"tasks": [], "seeds": [0]}))
        assert cli.main(["bound", "--config", str(p)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_verb(self):
        with pytest.raises(SystemExit):
            cli.main(["explode"])

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "pbadapt", "oracle-check", "--instances", "3",
                               "--out", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
