"""Does a divergence estimate predict how much accuracy we lose on the target?

Run with ``python demos/02_which_divergence_tracks_the_error_gap.py``
(about two minutes).

For each task we train a source-only model and measure
``target error - source error``. Then we check how well two divergence
estimates rank those gaps. The pairwise estimate looks for any two
hypotheses that disagree differently on the two domains. The per-model
estimate only asks how far the *trained* model can be pushed. A shuffled
baseline shows what correlation chance alone produces.
"""

from pbadapt import Shift, SyntheticSpec
from pbadapt.experiments import ExperimentConfig, TaskConfig, run_ranking_suite

shifts = {
    "none": Shift(),
    "noise": Shift("noise", sigma=1.0),
    "rotate 20": Shift("rotate", angle=20.0),
    "rotate 45": Shift("rotate", angle=45.0),
    "rotate 90": Shift("rotate", angle=90.0),
    "random labels": Shift("random_labels"),
}
tasks = tuple(TaskConfig(name, synthetic=SyntheticSpec(per_class_n=100, shift=s)) for name, s in shifts.items())
cfg = ExperimentConfig(tasks=tasks, architectures=({"kind": "linear"},), seeds=(0, 1), research_mode=True)

res = run_ranking_suite(cfg)

print(f"{'task':<15}{'seed':>5}{'gap':>8}{'pairwise':>10}{'per-model':>11}")
for r in res.rows:
    if r["status"] == "ok":
        print(f"{r['task']:<15}{r['seed']:>5}{r['error_gap']:8.3f}{r['hdh']:10.3f}{r['hdeltah']:11.3f}")

print()
for est, rho in res.spearman.items():
    print(f"{est:>8}: spearman={rho:+.3f}   shuffled median |rho|={res.permutation_null[est]:.3f}")
for c in res.caveats:
    print("caveat:", c)
