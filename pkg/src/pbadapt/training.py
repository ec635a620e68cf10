"""SGD engine and the differentiable objectives trained with it.

Objectives are callables ``objective(theta, idx) -> (loss, grad)`` where
``idx`` indexes the rows of the minibatch. Objectives that need to know
training progress expose a ``progress`` attribute, which the engine sets to
``epoch / total_epochs`` at the start of each epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import LabeledSample, UnlabeledSample
from .errors import NonFiniteError, TrainingDiverged, UnstableTraining, ValidationError
from .models import Architecture, ScoredModel, backward, forward, init_model

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "SurrogateConfig",
    "DannConfig",
    "sgd_minimize",
    "sgd_train",
    "balanced_weights",
    "weighted_nll",
    "NllObjective",
    "train_erm",
    "surrogate_z",
    "surrogate_z_grad",
    "surrogate_loss",
    "SurrogateObjective",
    "train_disagreement_pair",
    "dann_beta",
    "DannObjective",
    "dann_fit",
    "dann_train",
]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class TrainConfig:
    lr_schedule: tuple[tuple[float, int], ...] = ((1e-2, 100), (1e-3, 50))
    momentum: float = 0.9
    batch_size: int = 250
    early_stop_error: float = 5e-4
    seed: int = 0
    restarts: int = 1

    def __post_init__(self):
        sched = tuple((float(lr), int(ep)) for lr, ep in self.lr_schedule)
        object.__setattr__(self, "lr_schedule", sched)
        if not sched or any(lr <= 0 or ep < 1 for lr, ep in sched):
            raise ValidationError("learning rates must be > 0 and epochs >= 1")
        if self.batch_size < 1 or self.restarts < 1:
            raise ValidationError("batch_size and restarts must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")

    @property
    def total_epochs(self) -> int:
        return sum(ep for _, ep in self.lr_schedule)

    def with_seed(self, seed: int) -> "TrainConfig":
        return TrainConfig(self.lr_schedule, self.momentum, self.batch_size,
                           self.early_stop_error, int(seed), self.restarts)

    def to_dict(self) -> dict:
        return {
            "lr_schedule": [list(p) for p in self.lr_schedule],
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "early_stop_error": self.early_stop_error,
            "seed": self.seed,
            "restarts": self.restarts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lr_schedule" in d:
            d["lr_schedule"] = tuple(tuple(p) for p in d["lr_schedule"])
        return cls(**d)


# ---------------------------------------------------------------- engine


def sgd_minimize(
    objective: Callable,
    theta0: np.ndarray,
    cfg: TrainConfig,
    n: int,
    *,
    error_fn: Callable[[np.ndarray], float] | None = None,
    seed=None,
    monitor: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Minibatch SGD with heavy-ball momentum (``v = mu*v + g; theta -= lr*v``).

    Stops after an epoch whose ``error_fn(theta)`` falls below
    ``cfg.early_stop_error``. ``monitor(epoch, theta)`` is called after
    every epoch and must not modify ``theta``.

    Raises:
        TrainingDiverged: loss or gradient became non-finite.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    theta = np.array(theta0, dtype=np.float64, copy=True)
    vel = np.zeros_like(theta)
    total = cfg.total_epochs
    epoch = 0
    for lr, epochs in cfg.lr_schedule:
        for _ in range(epochs):
            if hasattr(objective, "progress"):
                objective.progress = epoch / total
            perm = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                loss, grad = objective(theta, perm[start : start + cfg.batch_size])
                if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise TrainingDiverged(epoch)
                vel *= cfg.momentum
                vel += grad
                theta -= lr * vel
            epoch += 1
            if monitor is not None:
                monitor(epoch, theta)
            if error_fn is not None and error_fn(theta) < cfg.early_stop_error:
                return theta
    return theta


def sgd_train(
    objective: Callable,
    init: ScoredModel,
    cfg: TrainConfig,
    n: int,
    *,
    error_fn: Callable[[np.ndarray], float] | None = None,
    reinit: Callable[[np.random.Generator], np.ndarray] | None = None,
) -> ScoredModel:
    """Train ``init``'s parameters; with restarts, keep the lowest final objective.

    Restart ``r > 0`` starts from ``reinit(rng_r)`` (default: a fresh
    initialisation of the same architecture). Each run draws from its own
    stream seeded by ``(cfg.seed, r)``. Diverged restarts are skipped.
    """
    if reinit is None:
        def reinit(rng):
            return init_model(init.architecture, rng).params
    best, best_loss, last_err = None, math.inf, None
    full = np.arange(n)
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        start = init.params if r == 0 else reinit(rng)
        try:
            theta = sgd_minimize(objective, start, cfg, n, error_fn=error_fn, seed=rng)
        except TrainingDiverged as exc:
            log.warning("restart %d diverged at epoch %d", r, exc.epoch)
            last_err = exc
            continue
        if cfg.restarts == 1:
            return init.with_params(theta)
        loss, _ = objective(theta, full)
        if loss < best_loss:
            best, best_loss = theta, loss
    if best is None:
        if cfg.restarts == 1:
            raise last_err
        raise UnstableTraining(f"all {cfg.restarts} restarts diverged") from last_err
    return init.with_params(best)


# ---------------------------------------------------------------- NLL


def balanced_weights(*sizes: int) -> np.ndarray:
    """Per-example weights ``1/n_g`` so each group carries unit total weight."""
    return np.concatenate([np.full(s, 1.0 / s) for s in sizes])


def _log_softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _nll_scores(scores, y, w):
    """Weighted mean cross-entropy and its gradient w.r.t. the scores."""
    wsum = w.sum()
    if wsum <= 0:
        raise ValidationError("weights must not all be zero")
    lp = _log_softmax(scores)
    rows = np.arange(y.size)
    loss = -(w * lp[rows, y]).sum() / wsum
    d = np.exp(lp)
    d[rows, y] -= 1.0
    d *= (w / wsum)[:, None]
    return loss, d


def weighted_nll(model: ScoredModel, x, y, weights=None) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy averaged with per-example weights.

    The loss is ``sum_i w_i * CE_i / sum_i w_i``; uniform weights give the
    plain mean NLL. Returns ``(loss, grad)`` with ``grad`` w.r.t. the model's
    flat parameters.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValidationError("weights must be non-negative")
    scores, cache = forward(model.architecture, model.params, x)
    loss, d = _nll_scores(scores, y, w)
    grad, _ = backward(model.architecture, model.params, cache, d)
    return loss, grad


class NllObjective:
    """Minibatch weighted NLL over a fixed dataset."""

    def __init__(self, arch: Architecture, x, y, weights=None):
        self.arch = arch
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.w = np.ones(self.y.size) if weights is None else np.asarray(weights, dtype=np.float64)

    def __call__(self, theta, idx):
        scores, cache = forward(self.arch, theta, self.x[idx])
        loss, d = _nll_scores(scores, self.y[idx], self.w[idx])
        grad, _ = backward(self.arch, theta, cache, d)
        return loss, grad

    def weighted_error(self, theta) -> float:
        scores, _ = forward(self.arch, theta, self.x)
        wrong = np.argmax(scores, axis=1) != self.y
        return float((self.w * wrong).sum() / self.w.sum())


def train_erm(
    arch: Architecture,
    x,
    y,
    cfg: TrainConfig,
    weights=None,
    init: ScoredModel | None = None,
) -> ScoredModel:
    """Weighted-NLL ERM; early stopping watches the weighted training error."""
    obj = NllObjective(arch, x, y, weights)
    if init is None:
        init = init_model(arch, np.random.default_rng([cfg.seed, 0x1A17]))
    return sgd_train(obj, init, cfg, obj.y.size, error_fn=obj.weighted_error)


# ---------------------------------------------------------------- surrogate


@dataclass(frozen=True)
class SurrogateConfig:
    """Choice of the monotone map applied to scores before the outer product.

    Every option is ``exp`` up to a positive per-row rescaling of ``A``, so
    the sign of ``z`` never depends on the choice:

    * ``exp_pershift`` (default) subtracts each model's own row maximum, so
      ``max A = 1`` and ``z`` lies in ``[0, 1)`` whatever the score scales.
    * ``exp_shifted`` subtracts the maximum of the concatenated ``(f, g)``
      row. ``z`` shrinks towards 0 when one model's scores dominate.
    * ``exp`` is unshifted and can overflow.
    """

    tau: str = "exp_pershift"

    def __post_init__(self):
        if self.tau not in ("exp", "exp_shifted", "exp_pershift"):
            raise ValidationError(f"unknown tau {self.tau!r}")


def surrogate_z_grad(fs: np.ndarray, gs: np.ndarray, tau: str = "exp_pershift"):
    """Margin score ``z`` for score rows ``fs, gs`` (``n x C``) and its gradients.

    ``z = max_jk A_jk - max_i A_ii`` with ``A = tau(g) tau(f)^T``. Since
    ``tau >= 0`` the first term factorises into ``max tau(g) * max tau(f)``.
    Returns ``(z, dz/dfs, dz/dgs)``.
    """
    n, C = fs.shape
    rows = np.arange(n)
    if tau == "exp_shifted":
        both = np.concatenate([fs, gs], axis=1)
        smax_idx = np.argmax(both, axis=1)
        shift = both[rows, smax_idx]
    elif tau == "exp_pershift":
        kf, kg = np.argmax(fs, axis=1), np.argmax(gs, axis=1)
        sf, sg = fs[rows, kf], gs[rows, kg]
    else:
        shift = np.zeros(n)
    if tau == "exp_pershift":
        a = np.exp(gs - sg[:, None])
        b = np.exp(fs - sf[:, None])
    else:
        a = np.exp(gs - shift[:, None])
        b = np.exp(fs - shift[:, None])
    j = np.argmax(a, axis=1)
    k = np.argmax(b, axis=1)
    diag = a * b
    i = np.argmax(diag, axis=1)
    top = a[rows, j] * b[rows, k]
    dmax = diag[rows, i]
    z = top - dmax
    dg = np.zeros_like(gs)
    df = np.zeros_like(fs)
    np.add.at(dg, (rows, j), top)
    np.add.at(df, (rows, k), top)
    np.add.at(dg, (rows, i), -dmax)
    np.add.at(df, (rows, i), -dmax)
    if tau == "exp_shifted":
        # z carries a factor exp(-2 * shift); shift is one of the scores
        dshift = -2.0 * z
        in_f = smax_idx < C
        np.add.at(df, (rows[in_f], smax_idx[in_f]), dshift[in_f])
        np.add.at(dg, (rows[~in_f], smax_idx[~in_f] - C), dshift[~in_f])
    elif tau == "exp_pershift":
        # z carries a factor exp(-(sf + sg))
        np.add.at(df, (rows, kf), -z)
        np.add.at(dg, (rows, kg), -z)
    return z, df, dg


def surrogate_z(f: ScoredModel, g: ScoredModel, x, cfg: SurrogateConfig = SurrogateConfig()):
    """Margin score of the pair ``(f, g)``; positive exactly where they disagree.

    Accepts one feature vector (returns a float) or a batch.
    """
    single = np.ndim(x) == 1
    fs, gs = f.scores(x), g.scores(x)
    if not (np.all(np.isfinite(fs)) and np.all(np.isfinite(gs))):
        raise NonFiniteError("non-finite scores")
    z, _, _ = surrogate_z_grad(fs, gs, cfg.tau)
    return float(z[0]) if single else z


def surrogate_loss(z, y):
    """``log(1 + exp(-(2y-1) z)) / log 2`` evaluated stably."""
    z = np.asarray(z, dtype=np.float64)
    sign = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    out = np.logaddexp(0.0, -sign * z) / LN2
    return float(out) if out.ndim == 0 else out


def _surrogate_dz(z, y):
    sign = 2.0 * y - 1.0
    t = -sign * z
    # d/dz softplus(t) = sigmoid(t) * dt/dz
    sig = np.exp(-np.logaddexp(0.0, -t))
    return -sign * sig / LN2


class SurrogateObjective:
    """Weighted surrogate loss for a pair ``(f, g)`` stored as one flat vector."""

    def __init__(self, arch: Architecture, x, y, weights, cfg: SurrogateConfig = SurrogateConfig()):
        self.arch = arch
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.w = np.asarray(weights, dtype=np.float64)
        self.tau = cfg.tau
        self.P = arch.param_count

    def __call__(self, theta, idx):
        tf, tg = theta[: self.P], theta[self.P :]
        x, y, w = self.x[idx], self.y[idx], self.w[idx]
        fs, cf = forward(self.arch, tf, x)
        gs, cg = forward(self.arch, tg, x)
        z, dzf, dzg = surrogate_z_grad(fs, gs, self.tau)
        wn = w / w.sum()
        loss = float((wn * surrogate_loss(z, y)).sum())
        dl = wn * _surrogate_dz(z, y)
        gf, _ = backward(self.arch, tf, cf, dzf * dl[:, None])
        gg, _ = backward(self.arch, tg, cg, dzg * dl[:, None])
        return loss, np.concatenate([gf, gg])

    def weighted_error(self, theta) -> float:
        fs, _ = forward(self.arch, theta[: self.P], self.x)
        gs, _ = forward(self.arch, theta[self.P :], self.x)
        phi = np.argmax(fs, axis=1) != np.argmax(gs, axis=1)
        return float((self.w * (phi != (self.y > 0.5))).sum() / self.w.sum())


def train_disagreement_pair(
    arch: Architecture,
    x,
    y,
    weights,
    cfg: TrainConfig,
    scfg: SurrogateConfig = SurrogateConfig(),
) -> tuple[ScoredModel, ScoredModel]:
    """Fit ``(f, g)`` so that ``1[argmax f != argmax g]`` predicts binary ``y``."""
    obj = SurrogateObjective(arch, x, y, weights, scfg)
    rng = np.random.default_rng([cfg.seed, 0x5E6])
    init = np.concatenate([init_model(arch, rng).params, init_model(arch, rng).params])

    def reinit(r):
        return np.concatenate([init_model(arch, r).params, init_model(arch, r).params])

    theta = sgd_train(obj, _FlatModel(None, init), cfg, obj.y.size,
                      error_fn=obj.weighted_error, reinit=reinit).params
    P = arch.param_count
    return ScoredModel(arch, theta[:P]), ScoredModel(arch, theta[P:])


class _FlatModel:
    """Minimal stand-in for ``ScoredModel`` when training non-model vectors."""

    def __init__(self, architecture, params):
        self.architecture = architecture
        self.params = np.asarray(params, dtype=np.float64)

    def with_params(self, params):
        return _FlatModel(self.architecture, params)


# ---------------------------------------------------------------- DANN


@dataclass(frozen=True)
class DannConfig:
    """DANN settings.

    ``base`` drives the SGD engine; its ``restarts`` bounds the number of
    fresh initialisations tried after divergence. The default step size is
    ten times the plain trainer's: with a few minibatches per epoch the
    adversarial game otherwise barely moves the features. ``kl_dampening`` is only
    used by the Gibbs variant (``gibbs.train_dann_gibbs``).
    """

    base: TrainConfig = field(
        default_factory=lambda: TrainConfig(lr_schedule=((1e-1, 100), (1e-2, 50)), restarts=5)
    )
    adversary_hidden_dims: tuple[int, ...] = (16,)
    ease_in: bool = True
    kl_dampening: float = 0.0
    subtract_one: bool = False

    def __post_init__(self):
        if self.kl_dampening < 0:
            raise ValidationError("kl_dampening must be >= 0")

    def adversary_arch(self, feature_dim: int) -> Architecture:
        if self.adversary_hidden_dims:
            return Architecture.mlp(feature_dim, 2, self.adversary_hidden_dims)
        return Architecture.linear(feature_dim, 2)


def dann_beta(progress: float, ease_in: bool = True, subtract_one: bool = False) -> float:
    """Adversarial weight ``2 / (1 + exp(-10 p))`` (minus one if ``subtract_one``)."""
    if not ease_in:
        return 1.0
    b = 2.0 / (1.0 + math.exp(-10.0 * progress))
    return b - 1.0 if subtract_one else b


class DannObjective:
    """Source NLL plus a gradient-reversed, class-balanced domain loss.

    ``theta`` is ``[model params, adversary params]``. The returned direction
    is the NLL gradient for the model, ``-beta`` times the domain-loss gradient
    for the feature map and ``+beta`` times it for the adversary. The loss
    reported is ``NLL + beta * domain``.
    """

    def __init__(self, arch: Architecture, adv_arch: Architecture, source: LabeledSample,
                 target: UnlabeledSample, cfg: DannConfig):
        if arch.kind != "mlp":
            raise ValidationError("DANN needs an mlp (a feature map to align)")
        self.arch, self.adv_arch, self.cfg = arch, adv_arch, cfg
        self.x = np.vstack([source.features, target.features])
        self.n_s = len(source)
        self.y = np.concatenate([source.labels, np.zeros(len(target), dtype=np.int64)])
        self.domain = np.concatenate([np.ones(len(source), np.int64), np.zeros(len(target), np.int64)])
        self.dom_w = balanced_weights(len(source), len(target))
        self.P = arch.param_count
        self.progress = 0.0

    @property
    def beta(self) -> float:
        return dann_beta(self.progress, self.cfg.ease_in, self.cfg.subtract_one)

    def parts(self, theta, idx):
        """``(nll, domain, d_nll/d_model, d_domain/d_model, d_domain/d_adv)``."""
        tm, ta = theta[: self.P], theta[self.P :]
        x = self.x[idx]
        src = idx < self.n_s
        scores, cache = forward(self.arch, tm, x)
        if src.any():
            nll, ds = _nll_scores(scores, self.y[idx], src.astype(np.float64))
        else:
            nll, ds = 0.0, np.zeros_like(scores)
        g_nll, _ = backward(self.arch, tm, cache, ds)
        feats = cache[-1]
        dscores, dcache = forward(self.adv_arch, ta, feats)
        dom, dd = _nll_scores(dscores, self.domain[idx], self.dom_w[idx])
        g_adv, dfeat = backward(self.adv_arch, ta, dcache, dd)
        g_dom_model, _ = backward(self.arch, tm, cache, dfeat, upto_features=True)
        return nll, dom, g_nll, g_dom_model, g_adv

    def __call__(self, theta, idx):
        nll, dom, g_nll, g_dom, g_adv = self.parts(theta, idx)
        b = self.beta
        return nll + b * dom, np.concatenate([g_nll - b * g_dom, b * g_adv])

    def source_error(self, theta) -> float:
        scores, _ = forward(self.arch, theta[: self.P], self.x[: self.n_s])
        return float(np.mean(np.argmax(scores, axis=1) != self.y[: self.n_s]))


def dann_fit(
    source: LabeledSample,
    target_features: UnlabeledSample,
    arch: Architecture,
    cfg: DannConfig = DannConfig(),
) -> tuple[ScoredModel, ScoredModel]:
    """Train DANN; returns ``(classifier, domain adversary)``.

    Early stopping is disabled so the adversarial game runs for the whole
    schedule. A diverged run is restarted from a fresh initialisation, up to
    ``cfg.base.restarts`` attempts.

    Raises:
        UnstableTraining: every attempt diverged.
    """
    adv_arch = cfg.adversary_arch(arch.feature_dim)
    obj = DannObjective(arch, adv_arch, source, target_features, cfg)
    base = cfg.base
    last = None
    for attempt in range(base.restarts):
        rng = np.random.default_rng([base.seed, attempt, 0xDA])
        theta0 = np.concatenate([init_model(arch, rng).params, init_model(adv_arch, rng).params])
        try:
            theta = sgd_minimize(obj, theta0, base, obj.x.shape[0], seed=rng)
        except TrainingDiverged as exc:
            log.warning("DANN attempt %d diverged at epoch %d", attempt, exc.epoch)
            last = exc
            continue
        P = arch.param_count
        return ScoredModel(arch, theta[:P]), ScoredModel(adv_arch, theta[P:])
    raise UnstableTraining(f"DANN diverged in all {base.restarts} attempts") from last


def dann_train(
    source: LabeledSample,
    target_features: UnlabeledSample,
    arch: Architecture,
    cfg: DannConfig = DannConfig(),
) -> ScoredModel:
    return dann_fit(source, target_features, arch, cfg)[0]
