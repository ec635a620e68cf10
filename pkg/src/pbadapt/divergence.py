"""Divergence estimators between source and target feature samples.

Trained estimators (``hdh_divergence``, ``h_delta_h_divergence`` and their
restricted and Monte-Carlo variants) fit a witness and report the divergence
it certifies, so they are lower estimates of the supremum. The
``exact_*`` functions enumerate finite hypothesis classes over a finite
domain and compute every quantity two independent ways.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledSample, UnlabeledSample
from .errors import (
    DimensionMismatch,
    NoFeatureMap,
    TheoremViolation,
    TrainingDiverged,
    UnstableTraining,
    ValidationError,
)
from .gibbs import GaussianGibbs, sample_model
from .models import Architecture, ScoredModel, init_model
from .training import (
    NllObjective,
    SurrogateConfig,
    SurrogateObjective,
    TrainConfig,
    balanced_weights,
    sgd_minimize,
)

log = logging.getLogger(__name__)

#: Default witness trainer: a 10x larger step than the model trainer, since
#: witnesses see only a few hundred minibatches on desk-scale samples, and the
#: lowest-objective run of three is kept.
WITNESS_CONFIG = TrainConfig(lr_schedule=((1e-1, 100), (1e-2, 50)), restarts=3)
#: Disagreement pairs carry twice the parameters and a bounded margin, so
#: they get a longer schedule.
PAIR_WITNESS_CONFIG = TrainConfig(lr_schedule=((1e-1, 400), (1e-2, 100)), restarts=3)

__all__ = [
    "WITNESS_CONFIG",
    "PAIR_WITNESS_CONFIG",
    "DivergenceEstimate",
    "MonteCarloDivergence",
    "GermainTerms",
    "FiniteClassSpec",
    "hdh_divergence",
    "second_best_labeler",
    "h_delta_h_divergence",
    "mc_hoeffding_penalty",
    "mc_divergence_over_gibbs",
    "restricted_divergence",
    "standardize_pair",
    "germain_penalty",
    "germain_terms",
    "exact_hdh",
    "exact_h_delta_h",
    "optimal_constrained_labeler",
    "random_finite_instance",
]


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    branch: str
    method: str
    branch_values: tuple[float, float] = (0.0, 0.0)
    clamped: bool = False
    witness: dict = field(default_factory=dict)

    @property
    def lower_estimate(self) -> bool:
        return self.method not in ("exact_enumeration",)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "branch": self.branch,
            "method": self.method,
            "branch_values": list(self.branch_values),
            "clamped": self.clamped,
            "lower_estimate": self.lower_estimate,
            "witness": self.witness,
        }


def _features(s) -> np.ndarray:
    if isinstance(s, (LabeledSample, UnlabeledSample)):
        return s.features
    x = np.asarray(s, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def _finish(pq: float, uv: float, method: str, witness: dict) -> DivergenceEstimate:
    branch = "PQ" if pq >= uv else "UV"
    raw = max(pq, uv)
    value = min(max(raw, 0.0), 1.0)
    clamped = value != raw
    if clamped:
        log.info("%s estimate %.6g clamped to %.6g", method, raw, value)
    return DivergenceEstimate(value, branch, method, (pq, uv), clamped, witness)


def _witness_search(cfg: TrainConfig, branch: int, make) -> float:
    """Best empirical branch value over ``cfg.restarts`` witness fits.

    ``make(rng, r)`` returns ``(objective, theta0, value_fn)``. The branch
    value ``value_fn(theta)`` is tracked after every epoch and the largest
    one seen is returned: the reduction minimises the 0-1 branch objective,
    and the smooth training loss is only a means of searching for it. Every
    candidate is a realised witness, so the result remains a lower estimate
    of the supremum.

    Raises:
        UnstableTraining: every fit diverged in its first epoch.
    """
    best, last = -np.inf, None
    ok = False
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, branch, r])
        obj, theta0, value = make(rng, r)
        seen = [value(theta0)]
        try:
            sgd_minimize(obj, theta0, cfg, obj.y.size, seed=rng,
                         monitor=lambda _e, th: seen.append(value(th)))
        except TrainingDiverged as exc:
            last = exc
            log.warning("witness fit %d diverged at epoch %d", r, exc.epoch)
            if exc.epoch == 0:
                continue
        ok = True
        best = max(best, max(seen))
    if not ok:
        raise UnstableTraining(f"all {cfg.restarts} witness fits diverged") from last
    return float(best)


def hdh_divergence(
    s,
    t,
    arch: Architecture,
    cfg: TrainConfig = PAIR_WITNESS_CONFIG,
    scfg: SurrogateConfig = SurrogateConfig(),
) -> DivergenceEstimate:
    """Model-independent divergence via two binary "which sample?" problems.

    Branch PQ labels source rows 1 and target rows 0; branch UV the reverse.
    Each branch trains a pair ``(f, g)`` on the class-balanced surrogate and
    is scored as ``1 - R_P - R_Q`` (resp. ``U, V``) with the 0-1 disagreement
    indicator of the pair.
    """
    xs, xt = _features(s), _features(t)
    if xs.shape[1] != xt.shape[1] or xs.shape[1] != arch.input_dim:
        raise DimensionMismatch("source, target and architecture dimensions differ")
    x = np.vstack([xs, xt])
    w = balanced_weights(len(xs), len(xt))
    P = arch.param_count
    out = []
    for b, (ys, yt) in enumerate(((1.0, 0.0), (0.0, 1.0))):
        y = np.concatenate([np.full(len(xs), ys), np.full(len(xt), yt)])
        sign = 1.0 if b == 0 else -1.0

        def value(theta, sign=sign):
            f, g = ScoredModel(arch, theta[:P]), ScoredModel(arch, theta[P:])
            gap = np.mean(f.predict(xs) != g.predict(xs)) - np.mean(f.predict(xt) != g.predict(xt))
            return float(sign * gap)

        def make(rng, r, y=y, value=value):
            theta0 = np.concatenate([init_model(arch, rng).params, init_model(arch, rng).params])
            return SurrogateObjective(arch, x, y, w, scfg), theta0, value

        out.append(_witness_search(cfg, b, make))
    return _finish(out[0], out[1], "hdh_surrogate",
                   {"seed": cfg.seed, "restarts": cfg.restarts, "architecture": arch.to_dict()})


class second_best_labeler:
    """Labels each input with ``h``'s second-highest-scoring class.

    Ties resolve to the least label among those tied; the result never
    equals ``h``'s own prediction.
    """

    def __init__(self, h: ScoredModel):
        if h.architecture.class_count < 2:
            raise ValidationError("need at least two classes")
        self.model = h

    def labels_from_scores(self, scores: np.ndarray) -> np.ndarray:
        s = np.array(scores, dtype=np.float64, copy=True)
        if s.ndim == 1:
            s = s[None, :]
        top = np.argmax(s, axis=1)
        s[np.arange(s.shape[0]), top] = -np.inf
        return np.argmax(s, axis=1)

    def __call__(self, x) -> np.ndarray:
        return self.labels_from_scores(self.model.scores(x))


def h_delta_h_divergence(
    h: ScoredModel,
    s,
    t,
    cfg: TrainConfig = WITNESS_CONFIG,
    witness_arch: Architecture | None = None,
) -> DivergenceEstimate:
    """Model-dependent divergence via ERM with a constrained labeling function.

    Branch PQ asks a witness to output ``h-bar`` (the second-best labeler) on
    the source and to agree with ``h`` on the target; branch UV swaps the
    roles. The witness is trained with class-balanced NLL over the same
    architecture as ``h`` unless ``witness_arch`` is given. The first
    restart starts from ``h`` itself (a witness is a perturbation of ``h``
    on its disagreement region); later restarts start fresh.
    """
    xs, xt = _features(s), _features(t)
    arch = witness_arch or h.architecture
    if xs.shape[1] != xt.shape[1] or xs.shape[1] != h.architecture.input_dim:
        raise DimensionMismatch("source, target and model dimensions differ")
    bar = second_best_labeler(h)
    hs, ht = h.predict(xs), h.predict(xt)
    bs, bt = bar(xs), bar(xt)
    x = np.vstack([xs, xt])
    w = balanced_weights(len(xs), len(xt))
    vals = []
    for b, (ls, lt) in enumerate(((bs, ht), (hs, bt))):
        y = np.concatenate([ls, lt])

        def value(theta, ls=ls, lt=lt):
            phi = ScoredModel(arch, theta)
            return float(1.0 - np.mean(phi.predict(xs) != ls) - np.mean(phi.predict(xt) != lt))

        def make(rng, r, y=y, value=value):
            start = h if r == 0 and arch == h.architecture else init_model(arch, rng)
            return NllObjective(arch, x, y, w), start.params.copy(), value

        vals.append(_witness_search(cfg, b, make))
    return _finish(vals[0], vals[1], "hdeltaH_erm", {"seed": cfg.seed, "restarts": cfg.restarts, "architecture": arch.to_dict()})


def mc_hoeffding_penalty(k: int, delta: float) -> float:
    """``sqrt(ln(2/delta) / (2k))``."""
    if k < 1 or not 0.0 < delta < 1.0:
        raise ValidationError("need k >= 1 and delta in (0, 1)")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * k))


@dataclass(frozen=True)
class MonteCarloDivergence:
    mean: float
    penalty: float
    per_draw: tuple[float, ...]
    k: int
    delta: float

    @property
    def value(self) -> float:
        """Upper estimate of the expected divergence; may exceed 1 (vacuous)."""
        return self.mean + self.penalty

    @property
    def vacuous(self) -> bool:
        return self.value >= 1.0


def mc_divergence_over_gibbs(
    q: GaussianGibbs,
    s,
    t,
    k: int,
    delta: float,
    cfg: TrainConfig = WITNESS_CONFIG,
    seed: int = 0,
) -> MonteCarloDivergence:
    """Average model-dependent divergence over ``k`` draws from ``q`` plus a Hoeffding term.

    Draw ``i`` uses the stream ``(seed, i)``; every draw trains its witnesses
    with the same ``cfg`` so identical draws give identical estimates.
    """
    pen = mc_hoeffding_penalty(k, delta)
    vals = tuple(
        h_delta_h_divergence(sample_model(q, np.random.default_rng([seed, i])), s, t, cfg).value
        for i in range(k)
    )
    # identical draws (a zero-variance q) must reproduce the deterministic value exactly
    mean = vals[0] if min(vals) == max(vals) else math.fsum(vals) / k
    return MonteCarloDivergence(float(mean), pen, vals, k, delta)


def standardize_pair(zs: np.ndarray, zt: np.ndarray):
    """Z-score two representation matrices with their pooled mean and std.

    Returns ``(zs', zt', mean, std)``. Constant coordinates are centred but
    not rescaled. Linear heads on the new coordinates are exactly the linear
    heads on the old ones, so only the conditioning SGD sees changes.
    """
    pooled = np.vstack([zs, zt])
    m = pooled.mean(axis=0)
    sd = pooled.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (zs - m) / sd, (zt - m) / sd, m, sd


def _standardize(zs: np.ndarray, zt: np.ndarray, head: ScoredModel):
    """``standardize_pair`` plus ``head`` rewritten to give the same scores."""
    zs, zt, m, sd = standardize_pair(zs, zt)
    C, F = head.architecture.class_count, head.architecture.input_dim
    W, b = head.params[: C * F].reshape(C, F), head.params[C * F :]
    # W z + b == (W * sd) ((z - m) / sd) + (b + W m)
    return zs, zt, head.with_params(np.concatenate([(W * sd).ravel(), b + W @ m]))


def restricted_divergence(
    mu: ScoredModel,
    s,
    t,
    variant: str = "muDh_at_mu",
    cfg: TrainConfig | None = None,
    scfg: SurrogateConfig = SurrogateConfig(),
) -> DivergenceEstimate:
    """Divergence over classifier heads sharing ``mu``'s frozen feature map.

    ``HdH_at_mu`` runs the pair estimator on the representations;
    ``muDh_at_mu`` runs the model-dependent estimator with ``h = head(mu)``.
    ``cfg`` defaults to the matching estimator's witness trainer.
    Representations are standardised first (see ``_standardize``).
    """
    if mu.architecture.kind != "mlp":
        raise NoFeatureMap("restricted divergence needs a model with a hidden layer")
    zs, zt = mu.features(_features(s)), mu.features(_features(t))
    zs, zt, head = _standardize(zs, zt, mu.head())
    if variant == "HdH_at_mu":
        est = hdh_divergence(zs, zt, head.architecture, cfg or PAIR_WITNESS_CONFIG, scfg)
    elif variant == "muDh_at_mu":
        est = h_delta_h_divergence(head, zs, zt, cfg or WITNESS_CONFIG)
    else:
        raise ValidationError(f"unknown variant {variant!r}")
    return DivergenceEstimate(est.value, est.branch, "restricted", est.branch_values, est.clamped,
                              {**est.witness, "variant": variant})


# ---------------------------------------------------------------- Germain


def germain_penalty(k: int, delta: float) -> float:
    """``sqrt(2 ln(2/delta) / k)``."""
    if k < 1 or not 0.0 < delta < 1.0:
        raise ValidationError("need k >= 1 and delta in (0, 1)")
    return math.sqrt(2.0 * math.log(2.0 / delta) / k)


@dataclass(frozen=True)
class GermainTerms:
    d_gap: float
    e_gap: float
    penalty: float


def germain_terms(q: GaussianGibbs, s: LabeledSample, t: LabeledSample, k: int,
                  delta: float, seed: int = 0) -> GermainTerms:
    """Disagreement and joint-error gaps of ``k`` independent model pairs from ``q``."""
    ds, dt, es, et = [], [], [], []
    for i in range(k):
        h1 = sample_model(q, np.random.default_rng([seed, 2 * i]))
        h2 = sample_model(q, np.random.default_rng([seed, 2 * i + 1]))
        for smp, d, e in ((s, ds, es), (t, dt, et)):
            p1, p2 = h1.predict(smp.features), h2.predict(smp.features)
            d.append(np.mean(p1 != p2))
            e.append(np.mean((p1 != smp.labels) & (p2 != smp.labels)))
    return GermainTerms(
        float(abs(np.mean(ds) - np.mean(dt))),
        float(abs(np.mean(es) - np.mean(et))),
        germain_penalty(k, delta),
    )


# ---------------------------------------------------------------- finite classes


@dataclass(frozen=True, eq=False)
class FiniteClassSpec:
    """``hypotheses[j, x]`` is hypothesis ``j``'s label at grid point ``x``."""

    hypotheses: np.ndarray
    class_count: int

    def __post_init__(self):
        h = np.asarray(self.hypotheses, dtype=np.int64)
        if h.ndim != 2 or not 1 <= h.shape[0] <= 256:
            raise ValidationError("need between 1 and 256 hypotheses over a shared grid")
        if h.min() < 0 or h.max() >= self.class_count:
            raise ValidationError("hypothesis labels out of range")
        object.__setattr__(self, "hypotheses", h)

    @property
    def size(self) -> int:
        return self.hypotheses.shape[0]

    @property
    def grid_size(self) -> int:
        return self.hypotheses.shape[1]


def _masses(idx, grid_size):
    idx = np.asarray(idx, dtype=np.int64)
    return np.bincount(idx, minlength=grid_size) / idx.size


def _check(direct: float, erm: float, what: str, tol: float) -> None:
    if abs(direct - erm) > tol:
        raise TheoremViolation(f"{what}: direct sup {direct!r} != ERM form {erm!r}")


def exact_hdh(s_idx, t_idx, fc: FiniteClassSpec, tol: float = 1e-12) -> DivergenceEstimate:
    """Exact pairwise-disagreement divergence of two grid samples.

    Path 1 takes the supremum of ``|E_s phi - E_t phi|`` over all pairs using
    grid masses. Path 2 minimises ``R_P + R_Q`` and ``R_U + R_V`` by
    exhaustive search, counting sample rows. Both must agree to ``tol``.

    Raises:
        TheoremViolation: the two paths disagree.
    """
    H = fc.hypotheses
    s_idx, t_idx = np.asarray(s_idx), np.asarray(t_idx)
    ps, pt = _masses(s_idx, fc.grid_size), _masses(t_idx, fc.grid_size)
    dis = (H[:, None, :] != H[None, :, :]).reshape(-1, fc.grid_size)
    direct = float(np.max(np.abs(dis.astype(float) @ ps - dis.astype(float) @ pt)))

    phi_s, phi_t = dis[:, s_idx], dis[:, t_idx]
    r_p = np.mean(~phi_s, axis=1)  # source rows labeled 1
    r_q = np.mean(phi_t, axis=1)   # target rows labeled 0
    r_u = np.mean(phi_s, axis=1)
    r_v = np.mean(~phi_t, axis=1)
    pq, uv = 1.0 - float(np.min(r_p + r_q)), 1.0 - float(np.min(r_u + r_v))
    _check(direct, max(pq, uv), "pairwise divergence", tol)
    return DivergenceEstimate(direct, "PQ" if pq >= uv else "UV", "exact_enumeration", (pq, uv))


def optimal_constrained_labeler(phi: np.ndarray, h: np.ndarray, class_count: int) -> np.ndarray:
    """Labeler disagreeing with ``h`` everywhere and with ``phi`` only where ``phi == h``."""
    top = class_count - 1
    fallback = np.where(phi == top, top - 1, top)
    return np.where(phi != h, phi, fallback)


def exact_h_delta_h(h, s_idx, t_idx, fc: FiniteClassSpec, tol: float = 1e-12) -> DivergenceEstimate:
    """Exact model-dependent divergence for labeling ``h`` (grid labels).

    Path 1 is the direct supremum over ``h' in fc``. Path 2 minimises the
    constrained-labeling ERM objective over every ``phi in fc`` using the
    per-``phi`` optimal labeler.

    Raises:
        TheoremViolation: the paths disagree or the labeler leaves the
            constraint set.
    """
    H = fc.hypotheses
    h = np.asarray(h, dtype=np.int64)
    s_idx, t_idx = np.asarray(s_idx), np.asarray(t_idx)
    ps, pt = _masses(s_idx, fc.grid_size), _masses(t_idx, fc.grid_size)
    dis = (H != h[None, :]).astype(float)
    direct = float(np.max(np.abs(dis @ ps - dis @ pt)))

    pq_obj, uv_obj = [], []
    for phi in H:
        bar = optimal_constrained_labeler(phi, h, fc.class_count)
        if np.any(bar == h):
            raise TheoremViolation("constructed labeler agrees with h somewhere")
        pq_obj.append(np.mean(phi[s_idx] != bar[s_idx]) + np.mean(phi[t_idx] != h[t_idx]))
        uv_obj.append(np.mean(phi[s_idx] != h[s_idx]) + np.mean(phi[t_idx] != bar[t_idx]))
    pq, uv = 1.0 - float(min(pq_obj)), 1.0 - float(min(uv_obj))
    _check(direct, max(pq, uv), "model-dependent divergence", tol)
    return DivergenceEstimate(direct, "PQ" if pq >= uv else "UV", "exact_enumeration", (pq, uv))


def random_finite_instance(rng: np.random.Generator, max_hypotheses: int = 64,
                           class_counts=(3, 4), max_grid: int = 32, max_rows: int = 40):
    """Random class over a random grid plus labeled source/target grid samples.

    Returns ``(fc, (s_idx, s_labels), (t_idx, t_labels))``. The two samples
    use different grid weightings so their divergence is usually non-zero.
    """
    C = int(rng.choice(class_counts))
    G = int(rng.integers(2, max_grid + 1))
    n_h = int(rng.integers(1, max_hypotheses + 1))
    fc = FiniteClassSpec(rng.integers(0, C, size=(n_h, G)), C)

    def draw():
        m = int(rng.integers(1, max_rows + 1))
        p = rng.dirichlet(np.full(G, 0.5))
        return rng.choice(G, size=m, p=p), rng.integers(0, C, size=m)

    return fc, draw(), draw()
