import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbadapt.data import Shift, SyntheticSpec
from pbadapt.errors import DimensionMismatch, UndefinedCorrelation, ValidationError
from pbadapt.experiments import (
    ExperimentConfig,
    TaskConfig,
    build_task,
    permutation_null,
    run_bounds_suite,
    run_oracle_check,
    run_ranking_suite,
    spearman,
)
from pbadapt.training import TrainConfig

SMALL = {"lr_schedule": [[0.1, 10]], "restarts": 1}


def small_config(**kw) -> ExperimentConfig:
    tasks = kw.pop("tasks", (
        TaskConfig("none", synthetic=SyntheticSpec(per_class_n=20)),
        TaskConfig("rot", synthetic=SyntheticSpec(per_class_n=20, shift=Shift("rotate", 45.0))),
    ))
    base = dict(tasks=tasks, train=TrainConfig.from_dict(SMALL), witness=TrainConfig.from_dict(SMALL),
                pair_witness=TrainConfig.from_dict(SMALL), k=2, research_mode=True)
    base.update(kw)
    return ExperimentConfig(**base)


class TestSpearman:
    def test_monotone(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == 1.0
        assert spearman([1, 2, 3], [30, 20, 10]) == -1.0

    def test_ties_hand_ranked(self):
        # average ranks (1.5, 1.5, 3) vs (1, 3, 2)
        rx, ry = np.array([1.5, 1.5, 3.0]), np.array([1.0, 3.0, 2.0])
        rx, ry = rx - rx.mean(), ry - ry.mean()
        want = (rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry))
        assert spearman([1, 1, 2], [3, 5, 4]) == pytest.approx(want, abs=1e-15)
        assert want == pytest.approx(0.0, abs=1e-15)

    def test_errors(self):
        with pytest.raises(DimensionMismatch):
            spearman([1, 2, 3], [1, 2])
        with pytest.raises(UndefinedCorrelation):
            spearman([1, 1, 1], [1, 2, 3])
        with pytest.raises(ValidationError):
            spearman([1, 2], [3, 4])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(-100, 100), min_size=3, max_size=30, unique=True), st.integers(0, 2**31))
    def test_monotone_invariance(self, xs, seed):
        # integer inputs keep exp() strictly increasing after rounding
        ys = np.random.default_rng(seed).standard_normal(len(xs))
        base = spearman(xs, ys)
        assert spearman(np.exp(np.asarray(xs) / 50), ys) == pytest.approx(base, abs=1e-12)
        assert spearman(xs, 3 * ys ** 3 + 1) == pytest.approx(base, abs=1e-12)

    def test_permutation_null_small(self):
        x = np.arange(40.0)
        assert permutation_null(x, x, 20, seed=0) <= 0.3


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = small_config()
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        again = ExperimentConfig.load(p)
        assert again.to_dict() == cfg.to_dict()
        assert again.config_hash == cfg.config_hash

    def test_hash_ignores_out(self):
        assert small_config(out="a").config_hash == small_config(out="b").config_hash
        assert small_config(k=2).config_hash != small_config(k=3).config_hash

    def test_unknown_key(self):
        d = small_config().to_dict()
        d["witnes"] = {}
        with pytest.raises(ValidationError, match="witnes"):
            ExperimentConfig.from_dict(d)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(ValidationError):
            ExperimentConfig.load(p)

    @pytest.mark.parametrize("kw", [{"tasks": ()}, {"seeds": ()}, {"theorems": ("thm99",)},
                                    {"estimators": ("hdh", "bogus")}, {"delta": 1.5}])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            small_config(**kw)

    def test_csv_task(self, tmp_path):
        (tmp_path / "s.csv").write_text("a,b,label\n0,0,0\n1,1,1\n2,2,0\n")
        (tmp_path / "t.csv").write_text("a,b\n0,1\n1,0\n")
        tc = TaskConfig.from_dict({"name": "c", "csv": {"source": str(tmp_path / "s.csv"),
                                                        "target": str(tmp_path / "t.csv")}})
        task = build_task(tc, 0)
        assert not task.research_mode and len(task.target_features) == 2


class TestRanking:
    def test_within_distribution_caveat(self):
        tasks = (TaskConfig("a", synthetic=SyntheticSpec(per_class_n=20)),
                 TaskConfig("b", synthetic=SyntheticSpec(per_class_n=20, shift=Shift("noise", sigma=0.01))))
        res = run_ranking_suite(small_config(tasks=tasks, seeds=(0, 1)))
        assert any("small spread" in c for c in res.caveats)
        assert len(res.rows) == 4

    def test_rows_and_estimators(self):
        res = run_ranking_suite(small_config(seeds=(0, 1)))
        assert set(res.spearman) == {"hdh", "hdeltah"}
        for r in res.rows:
            assert 0 <= r["hdeltah"] <= 1 and 0 <= r["hdh"] <= 1


class TestBoundsRunner:
    def test_counting_and_replay(self, tmp_path):
        cfg = small_config(theorems=("thm31", "thm52"), seeds=(0, 1, 2))
        run_bounds_suite(cfg, tmp_path / "a")
        run_bounds_suite(cfg, tmp_path / "b")
        reports = sorted((tmp_path / "a" / "reports").iterdir())
        assert len(reports) == 12
        assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
        doc = json.loads(reports[0].read_text())
        assert {"config_hash", "seeds", "report", "wall_time", "status"} <= set(doc)

    def test_violation_column(self, tmp_path):
        run_bounds_suite(small_config(theorems=("thm31",), seeds=(0,)), tmp_path)
        rows = list(csv.DictReader((tmp_path / "summary.csv").open()))
        assert all(r["violation_rate"] != "" for r in rows)
        assert all(r["in_trim95"] in ("0", "1") for r in rows)

    def test_failures_are_rows(self, tmp_path):
        # the restricted bound needs a hidden layer; linear cells fail but the run completes
        cfg = small_config(theorems=("cor53", "thm31"), seeds=(0,))
        rows = run_bounds_suite(cfg, tmp_path)
        status = {r["theorem"]: r["status"] for r in rows if r["task"] == "none"}
        assert status["cor53"].startswith("failed: NoFeatureMap")
        assert status["thm31"] == "ok"

    def test_deployment_mode_needs_assumptions(self, tmp_path):
        cfg = small_config(theorems=("thm31",), seeds=(0,), research_mode=False)
        rows = run_bounds_suite(cfg, tmp_path)
        assert all("deployment mode needs" in r["status"] for r in rows)
        cfg = cfg.replace(assumed_adaptability=0.1)
        rows = run_bounds_suite(cfg, tmp_path)
        assert all(r["status"] == "ok" and "violated" not in r for r in rows)

    def test_jobs_do_not_change_results(self, tmp_path):
        cfg = small_config(theorems=("thm31",), seeds=(0, 1))
        run_bounds_suite(cfg, tmp_path / "serial", jobs=1)
        run_bounds_suite(cfg, tmp_path / "pool", jobs=2)
        assert (tmp_path / "serial" / "summary.csv").read_bytes() == (tmp_path / "pool" / "summary.csv").read_bytes()


class TestOracleCheck:
    def test_small_run(self):
        res = run_oracle_check(10, seed=3)
        assert res["ok"] and res["instances"] == 10
        assert res["triangle_violations"] == 0
