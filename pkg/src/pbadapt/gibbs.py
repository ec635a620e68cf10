"""Diagonal-Gaussian Gibbs predictors over a model's parameter vector."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledSample, UnlabeledSample, empirical_risk
from .errors import IllegalPrior, TrainingDiverged, UnstableTraining, ValidationError
from .models import Architecture, ScoredModel, backward, forward, init_model
from .training import (
    DannConfig,
    DannObjective,
    TrainConfig,
    _nll_scores,
    sgd_minimize,
    train_erm,
)

__all__ = [
    "GaussianGibbs",
    "GibbsTrainSpec",
    "sample_id",
    "sample_model",
    "kl_divergence",
    "gibbs_risk_mc",
    "summary",
    "flatness_rho",
    "make_prior",
    "GibbsObjective",
    "train_gibbs",
    "train_dann_gibbs",
    "gibbs_to_dict",
    "gibbs_from_dict",
    "save_gibbs",
    "load_gibbs",
]

PRIOR_VARIANCE = 0.01


def sample_id(sample) -> str:
    """Content fingerprint of a sample's features (labels excluded)."""
    x = sample.features if hasattr(sample, "features") else np.asarray(sample)
    return hashlib.sha1(np.ascontiguousarray(x).tobytes()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class GaussianGibbs:
    """``N(mean, diag(variance))`` over the parameters of ``architecture``.

    ``provenance`` lists fingerprints of the samples the distribution was fit
    on. Zero variances are only accepted with ``test_mode``.
    """

    architecture: Architecture
    mean: np.ndarray
    variance: np.ndarray
    provenance: tuple[str, ...] = ()
    test_mode: bool = False

    def __post_init__(self):
        P = self.architecture.param_count
        m = np.array(self.mean, dtype=np.float64).ravel()
        v = np.array(self.variance, dtype=np.float64).ravel()
        if v.size == 1:
            v = np.full(P, v[0])
        if m.size != P or v.size != P:
            raise ValidationError(f"mean/variance must have length {P}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValidationError("variances must be finite and non-negative")
        if np.any(v == 0) and not self.test_mode:
            raise ValidationError("zero variance is only allowed in test mode")
        m.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variance", v)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class GibbsTrainSpec:
    prior: GaussianGibbs
    kl_dampening: float = 0.1
    mc_batch_samples: int = 1
    base: TrainConfig = field(default_factory=TrainConfig)
    delta: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValidationError("delta must lie in (0, 1)")
        if self.kl_dampening < 0 or self.mc_batch_samples < 1:
            raise ValidationError("need kl_dampening >= 0 and mc_batch_samples >= 1")


def sample_model(q: GaussianGibbs, seed) -> ScoredModel:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    eps = rng.standard_normal(q.mean.size)
    return ScoredModel(q.architecture, q.mean + q.std * eps)


def kl_divergence(q: GaussianGibbs, p: GaussianGibbs) -> float:
    """Closed-form ``KL(q || p)`` in nats for diagonal Gaussians.

    In test mode a coordinate where both variances are zero contributes 0 if
    the means agree and ``inf`` otherwise; a zero ``q`` variance against a
    positive ``p`` variance gives ``inf``.
    """
    if q.architecture != p.architecture:
        raise ValidationError("q and p live on different architectures")
    vq, vp = q.variance, p.variance
    dm = q.mean - p.mean
    if np.any(vp == 0) or np.any(vq == 0):
        if not (q.test_mode or p.test_mode):
            raise ValidationError("KL needs strictly positive variances")
        both = (vq == 0) & (vp == 0)
        if np.any(both & (dm != 0)) or np.any((vq == 0) & (vp > 0)) or np.any((vp == 0) & (vq > 0)):
            return math.inf
        keep = ~both
        vq, vp, dm = vq[keep], vp[keep], dm[keep]
    ratio = vq / vp
    return float(0.5 * np.sum(ratio + dm * dm / vp - 1.0 - np.log(ratio)))


def gibbs_risk_mc(q: GaussianGibbs, sample: LabeledSample, k: int, seed) -> tuple[float, np.ndarray]:
    """Monte-Carlo Gibbs risk: mean empirical risk of ``k`` sampled models.

    Draw ``i`` uses the stream seeded by ``(seed, i)``.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    n = len(sample)
    wrong = np.array([
        np.count_nonzero(sample_model(q, np.random.default_rng([seed, i])).predict(sample.features)
                         != sample.labels)
        for i in range(k)
    ])
    # one division of an exact integer count: k identical draws reproduce the single-model risk bit for bit
    return int(wrong.sum()) / (k * n), wrong / n


def summary(q: GaussianGibbs) -> ScoredModel:
    """The mean-parameter model."""
    return ScoredModel(q.architecture, q.mean)


def flatness_rho(q: GaussianGibbs, sample: LabeledSample, k: int, seed) -> float:
    """``|MC Gibbs risk - risk of the mean model|`` on ``sample``, no penalty."""
    g, _ = gibbs_risk_mc(q, sample, k, seed)
    return abs(g - empirical_risk(summary(q), sample))


def make_prior(
    source: LabeledSample,
    arch: Architecture,
    cfg: TrainConfig = TrainConfig(),
    variance: float = PRIOR_VARIANCE,
) -> GaussianGibbs:
    """Data-dependent prior: ERM on the source as mean, isotropic ``variance``."""
    h = train_erm(arch, source.features, source.labels, cfg)
    return GaussianGibbs(arch, h.params, np.full(arch.param_count, variance),
                         provenance=(sample_id(source),))


def check_prior(prior: GaussianGibbs, *targets) -> None:
    """Raise ``IllegalPrior`` if ``prior`` was fit on any of ``targets``."""
    for t in targets:
        if t is not None and sample_id(t) in prior.provenance:
            raise IllegalPrior("prior was trained on target data")


def _softplus(r):
    return np.logaddexp(0.0, r)


def _sigmoid(r):
    return np.exp(-np.logaddexp(0.0, -r))


def _inv_softplus(s):
    return np.log(np.expm1(s))


def _kl_and_grad(m, std, prior: GaussianGibbs):
    vp = prior.variance
    dm = m - prior.mean
    var = std * std
    kl = 0.5 * np.sum(var / vp + dm * dm / vp - 1.0 - np.log(var / vp))
    return float(kl), dm / vp, std / vp - 1.0 / std


class GibbsObjective:
    """Reparameterised MC NLL plus ``kl_dampening * KL(q || prior) / n``.

    ``theta`` is ``[mean, rho]`` with ``std = softplus(rho)``. Each call draws
    ``mc`` parameter perturbations from the objective's own generator.
    """

    def __init__(self, arch: Architecture, x, y, prior: GaussianGibbs,
                 kl_dampening: float, mc: int = 1, seed=0):
        self.arch = arch
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.prior = prior
        self.kl_dampening = kl_dampening
        self.mc = mc
        self.P = arch.param_count
        self.rng = np.random.default_rng(seed)

    def loss_grad(self, theta, idx, eps: np.ndarray):
        """Deterministic objective for fixed perturbations ``eps`` (``mc x P``)."""
        P = self.P
        m, r = theta[:P], theta[P:]
        std = _softplus(r)
        x, y = self.x[idx], self.y[idx]
        w = np.ones(y.size)
        loss, gm, gs = 0.0, np.zeros(P), np.zeros(P)
        for e in eps:
            th = m + std * e
            scores, cache = forward(self.arch, th, x)
            l, d = _nll_scores(scores, y, w)
            g, _ = backward(self.arch, th, cache, d)
            loss += l / len(eps)
            gm += g / len(eps)
            gs += g * e / len(eps)
        c = self.kl_dampening / self.y.size
        if c > 0:
            kl, dkm, dks = _kl_and_grad(m, std, self.prior)
            loss += c * kl
            gm += c * dkm
            gs += c * dks
        return loss, np.concatenate([gm, gs * _sigmoid(r)])

    def __call__(self, theta, idx):
        return self.loss_grad(theta, idx, self.rng.standard_normal((self.mc, self.P)))


def _initial_theta(prior: GaussianGibbs) -> np.ndarray:
    return np.concatenate([prior.mean, _inv_softplus(prior.std)])


def train_gibbs(source: LabeledSample, spec: GibbsTrainSpec) -> GaussianGibbs:
    """Fit a Gaussian posterior on the source, starting at the prior.

    Raises:
        UnstableTraining: every restart diverged.
    """
    prior = spec.prior
    arch = prior.architecture
    base = spec.base
    last = None
    for attempt in range(base.restarts):
        obj = GibbsObjective(arch, source.features, source.labels, prior,
                             spec.kl_dampening, spec.mc_batch_samples,
                             seed=[base.seed, attempt, 0x61B])
        try:
            theta = sgd_minimize(obj, _initial_theta(prior), base, len(source),
                                 seed=[base.seed, attempt])
        except TrainingDiverged as exc:
            last = exc
            continue
        P = arch.param_count
        std = _softplus(theta[P:])
        return GaussianGibbs(arch, theta[:P], std * std,
                             provenance=tuple(sorted({*prior.provenance, sample_id(source)})))
    raise UnstableTraining(f"Gibbs training diverged in all {base.restarts} attempts") from last


class DannGibbsObjective:
    """DANN where the classifier is Gaussian; KL dampening is eased in with beta."""

    def __init__(self, dann: DannObjective, prior: GaussianGibbs, kl_dampening: float, seed=0):
        self.dann = dann
        self.prior = prior
        self.kl_dampening = kl_dampening
        self.P = dann.P
        self.rng = np.random.default_rng(seed)
        self.progress = 0.0

    def loss_grad(self, theta, idx, eps):
        P = self.P
        m, r, ta = theta[:P], theta[P : 2 * P], theta[2 * P :]
        std = _softplus(r)
        self.dann.progress = self.progress
        b = self.dann.beta
        th = m + std * eps
        nll, dom, g_nll, g_dom, g_adv = self.dann.parts(np.concatenate([th, ta]), idx)
        d = g_nll - b * g_dom
        gm, gs = d.copy(), d * eps
        loss = nll + b * dom
        c = b * self.kl_dampening / self.dann.n_s
        if c > 0:
            kl, dkm, dks = _kl_and_grad(m, std, self.prior)
            loss += c * kl
            gm += c * dkm
            gs += c * dks
        return loss, np.concatenate([gm, gs * _sigmoid(r), b * g_adv])

    def __call__(self, theta, idx):
        return self.loss_grad(theta, idx, self.rng.standard_normal(self.P))


def train_dann_gibbs(
    source: LabeledSample,
    target_features: UnlabeledSample,
    prior: GaussianGibbs,
    cfg: DannConfig = DannConfig(),
) -> GaussianGibbs:
    """DANN with a Gaussian classifier, regularised by ``cfg.kl_dampening`` times the KL.

    The prior must be an mlp trained on the source only.
    """
    arch = prior.architecture
    check_prior(prior, target_features)
    adv_arch = cfg.adversary_arch(arch.feature_dim)
    base = cfg.base
    last = None
    for attempt in range(base.restarts):
        dobj = DannObjective(arch, adv_arch, source, target_features, cfg)
        obj = DannGibbsObjective(dobj, prior, cfg.kl_dampening, seed=[base.seed, attempt, 0xD6])
        rng = np.random.default_rng([base.seed, attempt, 0xDA])
        theta0 = np.concatenate([_initial_theta(prior), init_model(adv_arch, rng).params])
        try:
            theta = sgd_minimize(obj, theta0, base, dobj.x.shape[0], seed=rng)
        except TrainingDiverged as exc:
            last = exc
            continue
        P = arch.param_count
        std = _softplus(theta[P : 2 * P])
        return GaussianGibbs(arch, theta[:P], std * std,
                             provenance=tuple(sorted({*prior.provenance, sample_id(source)})))
    raise UnstableTraining(f"DANN diverged in all {base.restarts} attempts") from last


def gibbs_to_dict(q: GaussianGibbs) -> dict:
    return {
        "format": "pbadapt.gibbs",
        "version": 1,
        "architecture": q.architecture.to_dict(),
        "mean": [float(v) for v in q.mean],
        "variance": [float(v) for v in q.variance],
        "provenance": list(q.provenance),
        "test_mode": q.test_mode,
    }


def gibbs_from_dict(d: dict) -> GaussianGibbs:
    if d.get("version") != 1:
        raise ValidationError(f"unsupported Gibbs format version {d.get('version')!r}")
    return GaussianGibbs(
        Architecture.from_dict(d["architecture"]),
        np.array(d["mean"], dtype=np.float64),
        np.array(d["variance"], dtype=np.float64),
        tuple(d.get("provenance", ())),
        bool(d.get("test_mode", False)),
    )


def save_gibbs(q: GaussianGibbs, path) -> None:
    Path(path).write_text(json.dumps(gibbs_to_dict(q)))


def load_gibbs(path) -> GaussianGibbs:
    return gibbs_from_dict(json.loads(Path(path).read_text()))
