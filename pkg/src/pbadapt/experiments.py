"""Config-driven experiment suites: ranking, bounds, flatness, oracle checks.

Every suite is a list of independent cells. Cell seeds are derived from the
global seed and the cell's coordinates, so results do not depend on the
worker count or on execution order. Summaries never contain wall-clock
times and are byte-identical across replays of the same config.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .bounds import (
    BoundConfigs,
    assemble_cor53,
    assemble_thm31,
    assemble_thm52,
    lemma3_slacks,
    lemma5_slack,
    triangle_violations,
)
from .data import (
    AdaptationTask,
    Shift,
    SyntheticSpec,
    UnlabeledSample,
    error_gap,
    load_csv,
    make_synthetic_task,
)
from .divergence import (
    PAIR_WITNESS_CONFIG,
    WITNESS_CONFIG,
    exact_h_delta_h,
    exact_hdh,
    h_delta_h_divergence,
    hdh_divergence,
    random_finite_instance,
)
from .errors import (
    DimensionMismatch,
    PbAdaptError,
    TheoremViolation,
    UndefinedCorrelation,
    ValidationError,
)
from .gibbs import GibbsTrainSpec, flatness_rho, gibbs_risk_mc, make_prior, train_gibbs
from .models import Architecture
from .training import SurrogateConfig, TrainConfig, train_erm

log = logging.getLogger(__name__)

__all__ = [
    "TaskConfig",
    "ExperimentConfig",
    "RankingResult",
    "spearman",
    "permutation_null",
    "build_task",
    "run_ranking_suite",
    "run_bounds_suite",
    "run_flatness_suite",
    "run_oracle_check",
    "run_demo",
    "default_ranking_config",
    "default_demo_config",
]

THEOREMS = ("thm31", "thm31_md", "thm52", "cor53")


# ---------------------------------------------------------------- statistics


def spearman(xs, ys) -> float:
    """Rank correlation using average ranks for ties.

    Raises:
        DimensionMismatch: the inputs differ in length.
        ValidationError: fewer than three pairs.
        UndefinedCorrelation: either input is constant.
    """
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DimensionMismatch(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise ValidationError("need at least three pairs for a correlation")
    rx, ry = rankdata(x), rankdata(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    den = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if den == 0.0:
        raise UndefinedCorrelation("correlation is undefined for constant input")
    return float(np.clip(np.sum(rx * ry) / den, -1.0, 1.0))


def permutation_null(xs, ys, n_perm: int = 20, seed: int = 0) -> float:
    """Median ``|spearman|`` after shuffling the pairing ``n_perm`` times."""
    rng = np.random.default_rng(seed)
    y = np.asarray(ys, dtype=np.float64)
    return float(np.median([abs(spearman(xs, rng.permutation(y))) for _ in range(n_perm)]))


# ---------------------------------------------------------------- config


def _derive(*coords: int) -> int:
    return int(np.random.SeedSequence([int(c) for c in coords]).generate_state(1)[0])


@dataclass(frozen=True)
class TaskConfig:
    """A synthetic task spec or a pair of CSV files."""

    name: str
    synthetic: SyntheticSpec | None = None
    source_csv: str | None = None
    target_csv: str | None = None
    label_column: str = "label"

    def __post_init__(self):
        if (self.synthetic is None) == (self.source_csv is None):
            raise ValidationError(f"task {self.name!r} needs exactly one of synthetic or csv")
        if self.source_csv is not None and self.target_csv is None:
            raise ValidationError(f"task {self.name!r} needs a target csv")

    @classmethod
    def from_dict(cls, d: dict) -> "TaskConfig":
        if "synthetic" in d:
            sd = dict(d["synthetic"])
            sh = sd.pop("shift", {}) or {}
            shift = Shift(sh.get("kind", "none"), float(sh.get("angle", 0.0)),
                          float(sh.get("sigma", 0.0)), tuple(sh.get("weights", ())))
            spec = SyntheticSpec(shift=shift, **sd)
            spec.validate()
            return cls(d["name"], synthetic=spec)
        c = d["csv"]
        return cls(d["name"], source_csv=c["source"], target_csv=c["target"],
                   label_column=c.get("label_column", "label"))

    def to_dict(self) -> dict:
        if self.synthetic is not None:
            s = asdict(self.synthetic)
            s["shift"]["weights"] = list(s["shift"]["weights"])
            return {"name": self.name, "synthetic": s}
        return {"name": self.name, "csv": {"source": self.source_csv, "target": self.target_csv,
                                           "label_column": self.label_column}}


def build_task(tc: TaskConfig, seed: int) -> AdaptationTask:
    """Materialise a task; synthetic tasks are redrawn with ``seed``."""
    if tc.synthetic is not None:
        spec = SyntheticSpec(**{**asdict(tc.synthetic), "shift": tc.synthetic.shift, "seed": seed})
        return make_synthetic_task(spec)
    src = load_csv(tc.source_csv, tc.label_column)
    tgt_path = Path(tc.target_csv)
    header = tgt_path.read_text().splitlines()[0].split(",") if tgt_path.exists() else []
    tgt = load_csv(tgt_path, tc.label_column if tc.label_column in header else None)
    labels = getattr(tgt, "labels", None)
    return AdaptationTask(src, UnlabeledSample(tgt.features), labels, shift_descriptor=tc.name)


def _arch(d: dict, task: AdaptationTask) -> Architecture:
    kind = d.get("kind", "linear")
    if kind == "linear":
        return Architecture.linear(task.source.dim, task.source.class_count)
    return Architecture.mlp(task.source.dim, task.source.class_count, tuple(d.get("hidden_dims", (16,))))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a suite run needs; loaded from a JSON document.

    Unknown top-level keys are rejected so typos fail loudly.
    """

    tasks: tuple[TaskConfig, ...]
    architectures: tuple[dict, ...] = ({"kind": "linear"},)
    train: TrainConfig = field(default_factory=TrainConfig)
    witness: TrainConfig = WITNESS_CONFIG
    pair_witness: TrainConfig = PAIR_WITNESS_CONFIG
    surrogate: str = "exp_pershift"
    estimators: tuple[str, ...] = ("hdh", "hdeltah")
    theorems: tuple[str, ...] = ("thm31", "thm52")
    k: int = 20
    delta: float = 0.05
    kl_dampening: float = 0.1
    prior_variance: float = 0.01
    seeds: tuple[int, ...] = (0, 1, 2)
    seed: int = 0
    research_mode: bool = False
    assumed_adaptability: float | None = None
    assumed_rho: float | None = None
    oracle_instances: int = 100
    out: str = "runs"

    def __post_init__(self):
        if not self.tasks:
            raise ValidationError("config needs at least one task")
        if not self.seeds:
            raise ValidationError("config needs at least one seed")
        if not self.estimators and not self.theorems:
            raise ValidationError("config needs at least one estimator or theorem")
        bad = set(self.estimators) - {"hdh", "hdeltah"}
        bad |= set(self.theorems) - set(THEOREMS)
        if bad:
            raise ValidationError(f"unknown estimators/theorems: {sorted(bad)}")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ValidationError("task names must be unique")
        if self.k < 1 or not 0 < self.delta < 1:
            raise ValidationError("need k >= 1 and delta in (0, 1)")
        SurrogateConfig(self.surrogate)

    _KEYS = ("tasks", "architectures", "train", "witness", "pair_witness", "surrogate", "estimators", "theorems",
             "k", "delta", "kl_dampening", "prior_variance", "seeds", "seed", "research_mode",
             "assumed_adaptability", "assumed_rho", "oracle_instances", "out")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        kw["tasks"] = tuple(TaskConfig.from_dict(t) for t in d.get("tasks", ()))
        for key in ("architectures", "estimators", "theorems", "seeds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        for key in ("train", "witness", "pair_witness"):
            if key in kw:
                kw[key] = TrainConfig.from_dict(kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self._KEYS}
        d["tasks"] = [t.to_dict() for t in self.tasks]
        for key in ("train", "witness", "pair_witness"):
            d[key] = getattr(self, key).to_dict()
        for key in ("architectures", "estimators", "theorems", "seeds"):
            d[key] = list(d[key])
        return d

    def replace(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig(**{**{k: getattr(self, k) for k in self._KEYS}, **kw})

    @property
    def config_hash(self) -> str:
        """Hash of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("out", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- io helpers


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in columns})
    return buf.getvalue()


def _run_cells(fn, cells: list, jobs: int) -> list:
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


# ---------------------------------------------------------------- ranking


@dataclass(frozen=True)
class RankingResult:
    rows: tuple[dict, ...]
    spearman: dict[str, float]
    permutation_null: dict[str, float]
    caveats: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"rows": list(self.rows), "spearman": self.spearman,
                "permutation_null": self.permutation_null, "caveats": list(self.caveats)}


def _ranking_cell(args) -> dict:
    cfg_d, ti, ai, seed = args
    cfg = ExperimentConfig.from_dict(cfg_d)
    tc = cfg.tasks[ti]
    data_seed = _derive(cfg.seed, ti, seed)
    task = build_task(tc, data_seed)
    arch = _arch(cfg.architectures[ai], task)
    row = {"task": tc.name, "arch": arch.kind, "seed": seed, "status": "ok"}
    try:
        h = train_erm(arch, task.source.features, task.source.labels, cfg.train.with_seed(data_seed))
        row["error_gap"] = error_gap(h, task.source, task.target)
        wseed = _derive(cfg.seed, ti, seed, 1)
        wcfg = cfg.witness.with_seed(wseed)
        if "hdh" in cfg.estimators:
            row["hdh"] = hdh_divergence(task.source, task.target_features, arch,
                                        cfg.pair_witness.with_seed(wseed),
                                        SurrogateConfig(cfg.surrogate)).value
        if "hdeltah" in cfg.estimators:
            row["hdeltah"] = h_delta_h_divergence(h, task.source, task.target_features, wcfg).value
    except PbAdaptError as exc:
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def run_ranking_suite(cfg: ExperimentConfig, jobs: int = 1) -> RankingResult:
    """Source-only model per (task, architecture, seed); correlate divergences with error gaps."""
    cells = [(cfg.to_dict(), ti, ai, s) for ti in range(len(cfg.tasks))
             for ai in range(len(cfg.architectures)) for s in cfg.seeds]
    rows = _run_cells(_ranking_cell, cells, jobs)
    ok = [r for r in rows if r["status"] == "ok"]
    rho, null, caveats = {}, {}, []
    if len(ok) < 3:
        caveats.append("fewer than three successful cells; no correlation")
    else:
        gaps = [r["error_gap"] for r in ok]
        if np.std(gaps) < 0.02:
            caveats.append("error gaps have small spread; correlation is unreliable")
        for est in cfg.estimators:
            vals = [r[est] for r in ok]
            try:
                rho[est] = spearman(vals, gaps)
                null[est] = permutation_null(vals, gaps, 20, cfg.seed)
            except UndefinedCorrelation:
                caveats.append(f"{est}: correlation undefined (constant input)")
    return RankingResult(tuple(rows), rho, null, tuple(caveats))


def write_ranking(result: RankingResult, out: Path, cfg: ExperimentConfig) -> None:
    cols = ["task", "arch", "seed", "status", "error_gap", *cfg.estimators]
    _atomic_write(out / "ranking.csv", _csv_text(list(result.rows), cols))
    doc = {"config_hash": cfg.config_hash, "seeds": list(cfg.seeds), **result.to_dict()}
    _atomic_write(out / "ranking.json", _dump(doc))


# ---------------------------------------------------------------- bounds


def _fit_gibbs(cfg: ExperimentConfig, task: AdaptationTask, arch: Architecture, seed: int):
    base = cfg.train.with_seed(seed)
    prior = make_prior(task.source, arch, base, cfg.prior_variance)
    q = train_gibbs(task.source, GibbsTrainSpec(prior, cfg.kl_dampening, base=base))
    return prior, q


def _bounds_cell(args) -> dict:
    cfg_d, out_dir, ti, ai, theorem, ri = args
    cfg = ExperimentConfig.from_dict(cfg_d)
    tc, seed = cfg.tasks[ti], cfg.seeds[ri]
    t0 = time.perf_counter()
    data_seed = _derive(cfg.seed, ti, seed)
    cell_seed = _derive(cfg.seed, ti, THEOREMS.index(theorem), ri)
    row = {"task": tc.name, "arch": cfg.architectures[ai].get("kind", "linear"), "theorem": theorem,
           "seed": seed, "cell_seed": cell_seed, "status": "ok"}
    doc = {"config_hash": cfg.config_hash, "seeds": {"global": cfg.seed, "data": data_seed,
                                                       "cell": cell_seed}}
    try:
        task = build_task(tc, data_seed)
        arch = _arch(cfg.architectures[ai], task)
        prior, q = _fit_gibbs(cfg, task, arch, data_seed)
        research = cfg.research_mode and task.research_mode
        t = task.target if research else task.target_features
        cfgs = BoundConfigs(cfg.train.with_seed(cell_seed), cfg.witness.with_seed(cell_seed),
                            cfg.pair_witness.with_seed(cell_seed), SurrogateConfig(cfg.surrogate),
                            seed=cell_seed)
        assumed = {} if research else {"assumed_adaptability": cfg.assumed_adaptability}
        if theorem in ("thm31", "thm31_md"):
            choice = "model_independent" if theorem == "thm31" else "model_dependent"
            rep = assemble_thm31(q, prior, task.source, t, choice, cfg.k, cfg.delta, cfgs, **assumed)
        else:
            if not research:
                assumed["assumed_rho"] = cfg.assumed_rho
            fn = assemble_thm52 if theorem == "thm52" else assemble_cor53
            kw = {"variant": "HdH_at_mu"} if theorem == "cor53" else {}
            rep = fn(q, prior, task.source, t, k=cfg.k, delta=cfg.delta, cfgs=cfgs, **kw, **assumed)
        doc["report"] = rep.to_dict()
        row.update({k: v for k, v in rep.to_dict().items() if isinstance(v, float)})
        if research:
            tr, _ = gibbs_risk_mc(q, task.target, cfg.k, [cell_seed, 0x7A])
            row["target_gibbs_risk"] = tr
            row["violated"] = int(tr > rep.total)
            doc["target_gibbs_risk"] = tr
    except PbAdaptError as exc:
        row["status"] = doc["status"] = f"failed: {type(exc).__name__}: {exc}"
    doc["status"] = row["status"]
    doc["wall_time"] = time.perf_counter() - t0
    name = f"{tc.name}__{row['arch']}{ai}__{theorem}__r{ri}.json"
    _atomic_write(Path(out_dir) / "reports" / name, _dump(doc))
    return row


BOUND_COLUMNS = ["task", "arch", "theorem", "seed", "cell_seed", "status", "total", "adaptability",
                 "source_gibbs_risk", "divergence_term", "mc_penalty", "complexity_penalty", "rho",
                 "kl_nats", "target_gibbs_risk", "violated", "violation_rate", "in_trim95"]


def _annotate(rows: list[dict]) -> None:
    """Add per-(task, theorem) violation rates and the 95%-trim flag.

    The trim flag marks rows whose total is at or below the 95th percentile
    of totals for the same theorem.
    """
    groups: dict = {}
    for r in rows:
        if r["status"] == "ok":
            groups.setdefault((r["task"], r["theorem"]), []).append(r)
    for g in groups.values():
        v = [r["violated"] for r in g if "violated" in r]
        for r in g:
            r["violation_rate"] = float(np.mean(v)) if v else None
    by_thm: dict = {}
    for r in rows:
        if r["status"] == "ok":
            by_thm.setdefault(r["theorem"], []).append(r)
    for g in by_thm.values():
        cut = np.quantile([r["total"] for r in g], 0.95)
        for r in g:
            r["in_trim95"] = int(r["total"] <= cut)


def run_bounds_suite(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> list[dict]:
    """One JSON report per (task, architecture, theorem, seed) plus ``summary.csv``."""
    out = Path(out)
    cells = [(cfg.to_dict(), str(out), ti, ai, th, ri) for ti in range(len(cfg.tasks))
             for ai in range(len(cfg.architectures)) for th in cfg.theorems
             for ri in range(len(cfg.seeds))]
    rows = _run_cells(_bounds_cell, cells, jobs)
    _annotate(rows)
    _atomic_write(out / "summary.csv", _csv_text(rows, BOUND_COLUMNS))
    return rows


# ---------------------------------------------------------------- flatness


def _flatness_cell(args) -> dict:
    cfg_d, ti, ai, seed = args
    cfg = ExperimentConfig.from_dict(cfg_d)
    tc = cfg.tasks[ti]
    data_seed = _derive(cfg.seed, ti, seed)
    row = {"task": tc.name, "seed": seed, "status": "ok"}
    try:
        task = build_task(tc, data_seed)
        _, q = _fit_gibbs(cfg, task, _arch(cfg.architectures[ai], task), data_seed)
        row["rho_source"] = flatness_rho(q, task.source, cfg.k, [data_seed, 0x5])
        if task.research_mode:
            row["rho_target"] = flatness_rho(q, task.target, cfg.k, [data_seed, 0x7])
    except PbAdaptError as exc:
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def run_flatness_suite(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Estimate ``rho`` for a Gibbs predictor per (task, seed); report medians."""
    cells = [(cfg.to_dict(), ti, ai, s) for ti in range(len(cfg.tasks))
             for ai in range(len(cfg.architectures)) for s in cfg.seeds]
    rows = _run_cells(_flatness_cell, cells, jobs)
    ok = [r for r in rows if r["status"] == "ok"]
    src = [r["rho_source"] for r in ok]
    tgt = [r["rho_target"] for r in ok if "rho_target" in r]
    return {
        "rows": rows,
        "median_rho_source": float(np.median(src)) if src else None,
        "median_rho_target": float(np.median(tgt)) if tgt else None,
        "mean_rho_source": float(np.mean(src)) if src else None,
        "sd_rho_source": float(np.std(src)) if src else None,
    }


# ---------------------------------------------------------------- oracle check


def run_oracle_check(n_instances: int = 100, seed: int = 0) -> dict:
    """Dual-path equalities and lemma checks on random finite classes.

    Returns a summary with per-check failure counts and the smallest
    observed slacks; ``ok`` is true iff every check passed.
    """
    rng = np.random.default_rng(seed)
    fails = {"pairwise": 0, "model_dependent": 0, "lemma3": 0, "lemma5": 0}
    min_l3, min_l5 = np.inf, np.inf
    for _ in range(n_instances):
        fc, s, t = random_finite_instance(rng)
        try:
            exact_hdh(s[0], t[0], fc)
        except TheoremViolation:
            fails["pairwise"] += 1
        try:
            for h in fc.hypotheses:
                exact_h_delta_h(h, s[0], t[0], fc)
        except TheoremViolation:
            fails["model_dependent"] += 1
        try:
            sl = lemma3_slacks(fc, s, t)
            min_l3 = min(min_l3, *(float(v.min()) for v in sl.values()))
        except TheoremViolation:
            fails["lemma3"] += 1
        try:
            min_l5 = min(min_l5, lemma5_slack(fc, rng.dirichlet(np.ones(fc.size)), s, t))
        except TheoremViolation:
            fails["lemma5"] += 1
    tri = triangle_violations(5)
    return {
        "instances": n_instances,
        "seed": seed,
        "failures": fails,
        "triangle_violations": tri,
        "min_lemma3_slack": repr(float(min_l3)),
        "min_lemma5_slack": repr(float(min_l5)),
        "ok": tri == 0 and not any(fails.values()),
    }


# ---------------------------------------------------------------- demo


def default_demo_config(seed: int = 0) -> ExperimentConfig:
    task = TaskConfig("rotate30", synthetic=SyntheticSpec(per_class_n=100, shift=Shift("rotate", 30.0)))
    return ExperimentConfig(tasks=(task,), architectures=({"kind": "mlp", "hidden_dims": [16]},),
                            theorems=("thm31", "thm52", "cor53"), seeds=(0,), seed=seed,
                            research_mode=True, k=20)


def default_ranking_config(seed: int = 0) -> ExperimentConfig:
    """Graded shifts from none to random labels, two hypothesis classes, three seeds."""
    shifts = [("none", Shift()), ("noise05", Shift("noise", sigma=0.5)),
              ("noise15", Shift("noise", sigma=1.5)), ("rot20", Shift("rotate", 20.0)),
              ("rot45", Shift("rotate", 45.0)), ("rot90", Shift("rotate", 90.0)),
              ("random", Shift("random_labels"))]
    tasks = tuple(TaskConfig(n, synthetic=SyntheticSpec(per_class_n=100, shift=s)) for n, s in shifts)
    return ExperimentConfig(tasks=tasks, architectures=({"kind": "linear"}, {"kind": "mlp", "hidden_dims": [16]}),
                            seeds=(0, 1, 2), seed=seed, research_mode=True)


def default_flatness_config(seed: int = 0) -> ExperimentConfig:
    """Ten synthetic tasks (the ranking shifts plus three more) with an mlp, three seeds."""
    base = default_ranking_config(seed)
    extra = [("noise10", Shift("noise", sigma=1.0)), ("rot30", Shift("rotate", 30.0)),
             ("labels", Shift("label_shift", weights=(3.0, 1.0, 1.0)))]
    tasks = base.tasks + tuple(TaskConfig(n, synthetic=SyntheticSpec(per_class_n=100, shift=s))
                               for n, s in extra)
    return base.replace(tasks=tasks, architectures=({"kind": "mlp", "hidden_dims": [16]},))


def run_demo(cfg: ExperimentConfig, out: Path) -> dict:
    """One synthetic end-to-end run: bounds for each theorem plus a ranking snapshot.

    Writes ``demo_summary.json`` (no timings) and per-cell reports.
    """
    out = Path(out)
    rows = run_bounds_suite(cfg, out)
    keep = ["task", "arch", "theorem", "seed", "status", "total", "adaptability", "source_gibbs_risk",
            "divergence_term", "mc_penalty", "complexity_penalty", "rho", "kl_nats",
            "target_gibbs_risk", "violated"]
    summary = {"config_hash": cfg.config_hash, "rows": [{k: r.get(k) for k in keep} for r in rows]}
    _atomic_write(out / "demo_summary.json", _dump(summary))
    return summary
