"""Penalty terms, adaptability estimates and assembled target-risk bounds.

Every assembled bound is itemised in a :class:`BoundReport` whose ``total``
is the plain sum of its additive terms. Terms that come from trained
witnesses carry caveat strings: divergences are lower estimates of a
supremum, adaptabilities are upper estimates of a minimum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledSample, UnlabeledSample, empirical_risk, random_split
from .divergence import (
    PAIR_WITNESS_CONFIG,
    WITNESS_CONFIG,
    FiniteClassSpec,
    exact_h_delta_h,
    exact_hdh,
    germain_penalty,
    h_delta_h_divergence,
    hdh_divergence,
    mc_divergence_over_gibbs,
    mc_hoeffding_penalty as mc_penalty,
    restricted_divergence,
    standardize_pair,
)
from .errors import NoFeatureMap, TheoremViolation, ValidationError
from .gibbs import GaussianGibbs, check_prior, flatness_rho, gibbs_risk_mc, kl_divergence, summary
from .models import Architecture, ScoredModel
from .training import SurrogateConfig, TrainConfig, balanced_weights, train_erm

__all__ = [
    "BoundReport",
    "BoundConfigs",
    "pinsker_penalty",
    "mc_penalty",
    "germain_penalty",
    "lambda_hoeffding",
    "adaptability_tilde_ub",
    "adaptability_lambda_ub",
    "adaptability_mu",
    "assemble_thm31",
    "assemble_thm52",
    "assemble_cor53",
    "triangle_violations",
    "exact_adaptability",
    "lemma3_slacks",
    "lemma5_slack",
]

LOWER_DIVERGENCE = "divergence is ERM lower estimate"
UPPER_ADAPTABILITY = "adaptability is a trained-witness upper estimate"


# ---------------------------------------------------------------- penalties


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")


def pinsker_penalty(kl_nats: float, m: int, delta: float) -> float:
    """``sqrt((KL + ln sqrt(4m) - ln delta) / (2m))``."""
    _check_delta(delta)
    if m < 1 or not kl_nats >= 0:
        raise ValidationError("need m >= 1 and a non-negative KL")
    return math.sqrt((kl_nats + 0.5 * math.log(4.0 * m) - math.log(delta)) / (2.0 * m))


def lambda_hoeffding(m: int, n: int, delta: float) -> float:
    """Holdout slack ``sqrt(ln(4/delta)/(2m)) + sqrt(ln(4/delta)/(2n))``."""
    _check_delta(delta)
    if m < 1 or n < 1:
        raise ValidationError("holdout sizes must be >= 1")
    c = math.log(4.0 / delta)
    return math.sqrt(c / (2.0 * m)) + math.sqrt(c / (2.0 * n))


# ---------------------------------------------------------------- adaptability


def _balanced_fit(arch: Architecture, xs, ys, xt, yt, cfg: TrainConfig) -> ScoredModel:
    w = balanced_weights(len(xs), len(xt))
    return train_erm(arch, np.vstack([xs, xt]), np.concatenate([ys, yt]), cfg, weights=w)


def adaptability_tilde_ub(
    s: LabeledSample, t: LabeledSample, arch: Architecture, cfg: TrainConfig = TrainConfig()
) -> tuple[float, ScoredModel]:
    """``R_S(eta) + R_T(eta)`` for a witness ``eta`` trained on both samples equally weighted.

    Any ``eta`` gives an upper bound on the minimum, so the value is valid
    however well training went.
    """
    if s.dim != t.dim:
        raise ValidationError("source and target dimensions differ")
    eta = _balanced_fit(arch, s.features, s.labels, t.features, t.labels, cfg)
    return empirical_risk(eta, s) + empirical_risk(eta, t), eta


def adaptability_lambda_ub(
    s: LabeledSample,
    t: LabeledSample,
    arch: Architecture,
    cfg: TrainConfig = TrainConfig(),
    delta: float = 0.05,
    split_fraction: float = 0.8,
    seed: int = 0,
) -> float:
    """Population-level adaptability bound from a train/holdout split of each sample."""
    s_tr, s_ho = random_split(s, split_fraction, seed)
    t_tr, t_ho = random_split(t, split_fraction, seed + 1)
    eta = _balanced_fit(arch, s_tr.features, s_tr.labels, t_tr.features, t_tr.labels, cfg)
    return (empirical_risk(eta, s_ho) + empirical_risk(eta, t_ho)
            + lambda_hoeffding(len(s_ho), len(t_ho), delta))


def adaptability_mu(
    s: LabeledSample, t: LabeledSample, mu: ScoredModel, cfg: TrainConfig = TrainConfig()
) -> float:
    """Adaptability over classifier heads on ``mu``'s frozen representation.

    The representation is standardised before the head is fit; this does not
    change the set of heads.
    """
    if mu.architecture.kind != "mlp":
        raise NoFeatureMap("adaptability at mu needs a model with a hidden layer")
    zs, zt, _, _ = standardize_pair(mu.features(s.features), mu.features(t.features))
    head = _balanced_fit(mu.architecture.head_architecture(), zs, s.labels, zt, t.labels, cfg)
    return (float(np.mean(head.predict(zs) != s.labels))
            + float(np.mean(head.predict(zt) != t.labels)))


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class BoundReport:
    """Itemised upper bound on the target Gibbs risk.

    ``total`` is recomputed from the additive terms, so it cannot drift from
    them.
    """

    theorem: str
    adaptability: float
    source_gibbs_risk: float
    divergence_term: float
    kl_nats: float
    complexity_penalty: float
    delta: float
    m: int
    rho: float = 0.0
    mc_penalty: float = 0.0
    caveats: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)
    total: float = field(init=False)

    ADDITIVE = ("adaptability", "source_gibbs_risk", "divergence_term", "mc_penalty",
                "complexity_penalty", "rho")

    def __post_init__(self):
        if self.theorem not in ("thm31", "thm52", "cor53"):
            raise ValidationError(f"unknown theorem {self.theorem!r}")
        for name in self.ADDITIVE + ("kl_nats",):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative")
        object.__setattr__(self, "caveats", tuple(self.caveats))
        object.__setattr__(self, "total", float(sum(getattr(self, n) for n in self.ADDITIVE)))

    @property
    def vacuous(self) -> bool:
        return self.total >= 1.0

    def to_dict(self) -> dict:
        out = {n: getattr(self, n) for n in ("theorem", *self.ADDITIVE, "kl_nats", "total", "delta", "m")}
        out["caveats"] = list(self.caveats)
        out["details"] = self.details
        out["vacuous"] = self.vacuous
        return out


@dataclass(frozen=True)
class BoundConfigs:
    """Trainer settings used inside bound assembly.

    ``witness`` trains model-dependent witnesses and ``pair_witness`` the
    disagreement pairs. ``witness_arch`` overrides the architecture of
    divergence witnesses; by default they share the Gibbs predictor's.
    """

    adaptability: TrainConfig = field(default_factory=TrainConfig)
    witness: TrainConfig = WITNESS_CONFIG
    pair_witness: TrainConfig = PAIR_WITNESS_CONFIG
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    witness_arch: Architecture | None = None
    seed: int = 0


def _split(t):
    """``(features, labeled sample or None)`` for a research or deployment target."""
    if isinstance(t, LabeledSample):
        return t.features, t
    if isinstance(t, UnlabeledSample):
        return t.features, None
    return np.asarray(t, dtype=np.float64), None


def _adaptability(s, t_lab, arch, cfgs, assumed, caveats):
    if t_lab is not None:
        caveats.append(UPPER_ADAPTABILITY)
        return adaptability_tilde_ub(s, t_lab, arch, cfgs.adaptability)[0]
    if assumed is None:
        raise ValidationError("deployment mode needs an assumed adaptability value")
    caveats.append(f"deployment mode: adaptability assumed to be {assumed}")
    return float(assumed)


def _rho(q, s, t_lab, k, seed, assumed, caveats):
    if t_lab is not None:
        rs = flatness_rho(q, s, k, [seed, 0x5])
        rt = flatness_rho(q, t_lab, k, [seed, 0x7])
        return rs + rt, {"rho_source": rs, "rho_target": rt}
    if assumed is None:
        raise ValidationError("deployment mode needs an assumed flatness value")
    caveats.append(f"deployment mode: flatness assumed to be {assumed}")
    return float(assumed), {}


def _deltas(delta: float, strict: bool, mc_used: bool) -> tuple[float, float]:
    """``(pac_bayes_delta, mc_delta)``; strict mode halves each by a union bound."""
    _check_delta(delta)
    if strict and mc_used:
        return delta / 2.0, delta / 2.0
    return delta, delta


def assemble_thm31(
    q: GaussianGibbs,
    prior: GaussianGibbs,
    s: LabeledSample,
    t,
    choice: str = "model_independent",
    k: int = 100,
    delta: float = 0.05,
    cfgs: BoundConfigs = BoundConfigs(),
    *,
    assumed_adaptability: float | None = None,
    strict: bool = False,
) -> BoundReport:
    """Target Gibbs risk bound with an expected-divergence term.

    ``t`` is a :class:`LabeledSample` in research mode; otherwise pass the
    target features and ``assumed_adaptability``.

    Raises:
        IllegalPrior: ``prior`` was trained on the target features.
    """
    if choice not in ("model_independent", "model_dependent"):
        raise ValidationError(f"unknown divergence choice {choice!r}")
    tx, t_lab = _split(t)
    check_prior(prior, tx)
    caveats: list[str] = []
    d_pac, d_mc = _deltas(delta, strict, choice == "model_dependent")
    lam = _adaptability(s, t_lab, q.architecture, cfgs, assumed_adaptability, caveats)
    risk, _ = gibbs_risk_mc(q, s, k, [cfgs.seed, 0x51])
    kl = kl_divergence(q, prior)
    details = {"choice": choice, "k": k, "seed": cfgs.seed, "strict": strict}
    if choice == "model_independent":
        est = hdh_divergence(s, tx, cfgs.witness_arch or q.architecture, cfgs.pair_witness,
                             cfgs.surrogate)
        div, mcp = est.value, 0.0
        details["divergence"] = est.to_dict()
    else:
        mc = mc_divergence_over_gibbs(q, s, tx, k, d_mc, cfgs.witness, seed=cfgs.seed)
        div, mcp = mc.mean, mc.penalty
        details["divergence"] = {"method": "mc_gibbs", "mean": mc.mean, "k": k}
    caveats.append(LOWER_DIVERGENCE)
    return BoundReport("thm31", lam, risk, div, kl, pinsker_penalty(kl, len(tx), d_pac), delta,
                       len(tx), 0.0, mcp, tuple(caveats), details)


def assemble_thm52(
    q: GaussianGibbs,
    prior: GaussianGibbs,
    s: LabeledSample,
    t,
    k: int = 100,
    delta: float = 0.05,
    cfgs: BoundConfigs = BoundConfigs(),
    *,
    assumed_adaptability: float | None = None,
    assumed_rho: float | None = None,
) -> BoundReport:
    """Bound using one model-dependent divergence at the mean model plus a flatness term."""
    tx, t_lab = _split(t)
    check_prior(prior, tx)
    caveats: list[str] = []
    lam = _adaptability(s, t_lab, q.architecture, cfgs, assumed_adaptability, caveats)
    risk, _ = gibbs_risk_mc(q, s, k, [cfgs.seed, 0x51])
    kl = kl_divergence(q, prior)
    rho, rho_parts = _rho(q, s, t_lab, k, cfgs.seed, assumed_rho, caveats)
    est = h_delta_h_divergence(summary(q), s, tx, cfgs.witness, cfgs.witness_arch)
    caveats.append(LOWER_DIVERGENCE)
    details = {"k": k, "seed": cfgs.seed, "divergence": est.to_dict(), **rho_parts}
    return BoundReport("thm52", lam, risk, est.value, kl, pinsker_penalty(kl, len(tx), delta), delta,
                       len(tx), rho, 0.0, tuple(caveats), details)


def assemble_cor53(
    q: GaussianGibbs,
    prior: GaussianGibbs,
    s: LabeledSample,
    t,
    variant: str = "HdH_at_mu",
    k: int = 100,
    delta: float = 0.05,
    cfgs: BoundConfigs = BoundConfigs(),
    *,
    assumed_adaptability: float | None = None,
    assumed_rho: float | None = None,
) -> BoundReport:
    """Bound with divergence and adaptability restricted to heads on the mean model's features."""
    mu = summary(q)
    if mu.architecture.kind != "mlp":
        raise NoFeatureMap("the restricted bound needs a model with a hidden layer")
    tx, t_lab = _split(t)
    check_prior(prior, tx)
    caveats: list[str] = []
    if t_lab is not None:
        lam = adaptability_mu(s, t_lab, mu, cfgs.adaptability)
        caveats.append(UPPER_ADAPTABILITY)
    else:
        lam = _adaptability(s, None, None, cfgs, assumed_adaptability, caveats)
    risk, _ = gibbs_risk_mc(q, s, k, [cfgs.seed, 0x51])
    kl = kl_divergence(q, prior)
    rho, rho_parts = _rho(q, s, t_lab, k, cfgs.seed, assumed_rho, caveats)
    wcfg = cfgs.pair_witness if variant == "HdH_at_mu" else cfgs.witness
    est = restricted_divergence(mu, s, tx, variant, wcfg, cfgs.surrogate)
    caveats.append(LOWER_DIVERGENCE)
    details = {"k": k, "seed": cfgs.seed, "variant": variant, "divergence": est.to_dict(), **rho_parts}
    return BoundReport("cor53", lam, risk, est.value, kl, pinsker_penalty(kl, len(tx), delta), delta,
                       len(tx), rho, 0.0, tuple(caveats), details)


# ---------------------------------------------------------------- finite harness


def triangle_violations(max_classes: int = 5) -> int:
    """Count label triples breaking the 0-1 triangle inequalities.

    Checks ``1[a != c] <= 1[a != b] + 1[b != c]`` and
    ``|1[a != c] - 1[b != c]| <= 1[a != b]`` for every triple over every
    label-space size up to ``max_classes``.
    """
    bad = 0
    for C in range(1, max_classes + 1):
        for a, b, c in itertools.product(range(C), repeat=3):
            ac, ab, bc = int(a != c), int(a != b), int(b != c)
            bad += ac > ab + bc
            bad += abs(ac - bc) > ab
    return bad


def _risks(fc: FiniteClassSpec, sample) -> np.ndarray:
    idx, y = (np.asarray(v) for v in sample)
    return np.mean(fc.hypotheses[:, idx] != y[None, :], axis=1)


def exact_adaptability(fc: FiniteClassSpec, s, t) -> float:
    """Exhaustive ``min_eta R_S(eta) + R_T(eta)``; samples are ``(grid_idx, labels)``."""
    return float(np.min(_risks(fc, s) + _risks(fc, t)))


def lemma3_slacks(fc: FiniteClassSpec, s, t, tol: float = 1e-12) -> dict[str, np.ndarray]:
    """Per-hypothesis ``adaptability + divergence - |R_S(h) - R_T(h)|`` for both classes.

    Raises:
        TheoremViolation: some slack is below ``-tol``.
    """
    lam = exact_adaptability(fc, s, t)
    gap = np.abs(_risks(fc, s) - _risks(fc, t))
    d_pair = exact_hdh(s[0], t[0], fc).value
    d_h = np.array([exact_h_delta_h(h, s[0], t[0], fc).value for h in fc.hypotheses])
    out = {"pairwise": lam + d_pair - gap, "model_dependent": lam + d_h - gap}
    for name, sl in out.items():
        if np.min(sl) < -tol:
            raise TheoremViolation(f"{name} slack {np.min(sl)!r} is negative")
    return out


def lemma5_slack(fc: FiniteClassSpec, weights, s, t, tol: float = 1e-12) -> float:
    """Slack of the expected-gap chain for a finite Gibbs predictor with ``weights`` over ``fc``.

    Raises:
        TheoremViolation: the gap of expected risks exceeds adaptability plus
            expected model-dependent divergence.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (fc.size,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
        raise ValidationError("weights must be a probability vector over the class")
    gap = abs(float(w @ _risks(fc, s)) - float(w @ _risks(fc, t)))
    d = np.array([exact_h_delta_h(h, s[0], t[0], fc).value for h in fc.hypotheses])
    slack = exact_adaptability(fc, s, t) + float(w @ d) - gap
    if slack < -tol:
        raise TheoremViolation(f"expected-gap slack {slack!r} is negative")
    return slack
