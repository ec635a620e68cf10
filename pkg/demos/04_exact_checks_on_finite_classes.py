"""Exact divergences on tiny hypothesis classes.

Run with ``python demos/04_exact_checks_on_finite_classes.py``.

On a finite grid with an enumerable hypothesis class every supremum can be
computed by brute force. Each divergence is computed two ways (directly
from its definition, and through the error of an optimal labeler) and the
two must agree exactly. We also show the per-model estimate never exceeds
the pairwise one.
"""

import numpy as np

from pbadapt.divergence import exact_h_delta_h, exact_hdh, random_finite_instance
from pbadapt.experiments import run_oracle_check

rng = np.random.default_rng(7)
fc, s, t = random_finite_instance(rng)
print(f"{fc.size} hypotheses over {fc.hypotheses.shape[1]} grid points, {fc.class_count} classes")

pairwise = exact_hdh(s[0], t[0], fc)
per_model = [exact_h_delta_h(h, s[0], t[0], fc).value for h in fc.hypotheses]
print(f"pairwise divergence          {pairwise.value:.4f}")
print(f"per-model divergence, max    {max(per_model):.4f}")
print(f"per-model divergence, median {np.median(per_model):.4f}")

# The CLI's oracle-check runs the same comparison over many random instances.
summary = run_oracle_check(25, seed=0)
print("\n25 random instances:", summary["failures"], "ok" if summary["ok"] else "FAILED")
