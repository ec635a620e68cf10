import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbadapt.data import LabeledSample, Shift, SyntheticSpec, UnlabeledSample, make_synthetic_task
from pbadapt.errors import TrainingDiverged, ValidationError
from pbadapt.models import Architecture, ScoredModel, forward, init_model
from pbadapt.training import (
    DannConfig,
    DannObjective,
    NllObjective,
    SurrogateConfig,
    SurrogateObjective,
    TrainConfig,
    balanced_weights,
    dann_beta,
    dann_fit,
    sgd_minimize,
    surrogate_loss,
    surrogate_z,
    surrogate_z_grad,
    train_erm,
    weighted_nll,
)

from conftest import central_diff, rel_err


class _Quadratic:
    def __call__(self, theta, idx):
        return float((theta[0] - 3.0) ** 2), np.array([2.0 * (theta[0] - 3.0)])


class TestSgd:
    def test_zero_gradient(self):
        th0 = np.array([1.0, -2.0])
        out = sgd_minimize(lambda th, idx: (0.0, np.zeros(2)), th0, TrainConfig(), 10)
        np.testing.assert_array_equal(out, th0)

    def test_quadratic(self):
        cfg = TrainConfig(lr_schedule=((0.1, 200),), momentum=0.0, batch_size=1)
        out = sgd_minimize(_Quadratic(), np.zeros(1), cfg, 1)
        assert abs(out[0] - 3.0) < 1e-3
        # closed form: theta_t = 3 (1 - 0.8^t)
        assert out[0] == pytest.approx(3.0 * (1 - 0.8 ** 200), abs=1e-12)

    def test_early_stop_on_separable(self, blobs):
        obj = NllObjective(Architecture.linear(2, 3), blobs.features, blobs.labels)
        epochs = []
        cfg = TrainConfig(lr_schedule=((1e-1, 100),))
        sgd_minimize(obj, np.zeros(9), cfg, len(blobs), error_fn=obj.weighted_error,
                     monitor=lambda e, th: epochs.append(e))
        assert epochs[-1] < 100
        assert obj.weighted_error(np.zeros(9)) > 0.5

    def test_divergence_names_epoch(self):
        def bad(theta, idx):
            return math.inf, np.zeros(1)
        with pytest.raises(TrainingDiverged) as ei:
            sgd_minimize(bad, np.zeros(1), TrainConfig(), 4)
        assert ei.value.epoch == 0

    def test_deterministic(self, blobs):
        cfg = TrainConfig(lr_schedule=((1e-2, 5),), seed=3, batch_size=16)
        a = train_erm(Architecture.mlp(2, 3, (4,)), blobs.features, blobs.labels, cfg)
        b = train_erm(Architecture.mlp(2, 3, (4,)), blobs.features, blobs.labels, cfg)
        np.testing.assert_array_equal(a.params, b.params)

    @pytest.mark.parametrize("kw", [{"lr_schedule": ((0.0, 1),)}, {"batch_size": 0},
                                    {"restarts": 0}, {"momentum": 1.0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValidationError):
            TrainConfig(**kw)


class TestWeightedNll:
    def _setup(self, seed=0, n=20):
        rng = np.random.default_rng(seed)
        m = init_model(Architecture.mlp(2, 3, (4,)), rng)
        return m, rng.standard_normal((n, 2)), rng.integers(0, 3, n)

    def test_uniform_is_mean(self):
        m, x, y = self._setup()
        s = m.scores(x)
        lse = np.log(np.exp(s - s.max(1, keepdims=True)).sum(1)) + s.max(1)
        want = float(np.mean(lse - s[np.arange(20), y]))
        assert weighted_nll(m, x, y)[0] == pytest.approx(want, rel=1e-12)

    def test_masked_rows_ignored(self):
        m, x, y = self._setup()
        w = np.r_[np.ones(10), np.zeros(10)]
        x2 = x.copy()
        x2[10:] += 5.0
        g1 = weighted_nll(m, x, y, w)[1]
        g2 = weighted_nll(m, x2, y, w)[1]
        np.testing.assert_allclose(g1, g2, atol=1e-15)

    def test_all_zero_weights(self):
        m, x, y = self._setup()
        with pytest.raises(ValidationError):
            weighted_nll(m, x, y, np.zeros(20))

    def test_balanced_bookkeeping(self):
        w = balanced_weights(200, 100)
        assert w[:200].sum() == pytest.approx(1.0) and w[200:].sum() == pytest.approx(1.0)
        assert w[0] == 1 / 200 and w[-1] == 1 / 100

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_gradient(self, seed):
        m, x, y = self._setup(seed, 8)
        w = np.random.default_rng(seed).uniform(0.1, 2.0, 8)
        g = weighted_nll(m, x, y, w)[1]
        num = central_diff(lambda th: weighted_nll(m.with_params(th), x, y, w)[0], m.params.copy())
        assert rel_err(g, num) < 1e-4


def _const(scores):
    return ScoredModel(Architecture.linear(1, len(scores)), np.r_[np.zeros(len(scores)), scores])


class TestSurrogate:
    def test_identical_pair(self):
        m = init_model(Architecture.mlp(2, 4, (3,)), 0)
        x = np.random.default_rng(0).standard_normal((50, 2))
        for tau in ("exp", "exp_shifted", "exp_pershift"):
            np.testing.assert_allclose(surrogate_z(m, m, x, SurrogateConfig(tau)), 0.0, atol=1e-15)

    def test_hand_example(self):
        f, g = _const([2.0, 0.0]), _const([0.0, 1.0])
        z = surrogate_z(f, g, [0.0], SurrogateConfig("exp"))
        assert z == pytest.approx(math.e ** 3 - math.e ** 2, rel=1e-12)
        assert z == pytest.approx(12.70, abs=5e-3)
        assert f.predict([0.0])[0] == 0 and g.predict([0.0])[0] == 1
        for tau in ("exp_shifted", "exp_pershift"):
            assert surrogate_z(f, g, [0.0], SurrogateConfig(tau)) > 0

    def test_sign_matches_disagreement(self):
        rng = np.random.default_rng(1)
        fs = rng.standard_normal((10_000, 4)) * 3
        gs = rng.standard_normal((10_000, 4)) * 3
        dis = fs.argmax(1) != gs.argmax(1)
        for tau in ("exp", "exp_shifted", "exp_pershift"):
            z, _, _ = surrogate_z_grad(fs, gs, tau)
            np.testing.assert_array_equal(z > 0, dis)
            assert np.all(z[~dis] == 0)

    def test_loss_values(self):
        assert surrogate_loss(0.0, 0) == 1.0
        assert surrogate_loss(math.log(3), 0) == pytest.approx(2.0, abs=1e-14)
        tiny = surrogate_loss(-50.0, 0)
        assert 0 < tiny < 1e-20
        assert tiny == pytest.approx(math.log1p(math.exp(-50)) / math.log(2), rel=1e-12)
        assert np.isfinite(surrogate_loss(1e6, 0)) and np.isfinite(surrogate_loss(-1e6, 1))

    def test_unknown_tau(self):
        with pytest.raises(ValidationError):
            SurrogateConfig("relu")

    @pytest.mark.parametrize("tau", ["exp", "exp_shifted", "exp_pershift"])
    def test_objective_gradient(self, tau):
        rng = np.random.default_rng(4)
        arch = Architecture.mlp(2, 3, (4,))
        x = rng.standard_normal((12, 2))
        y = rng.integers(0, 2, 12)
        obj = SurrogateObjective(arch, x, y, balanced_weights(6, 6), SurrogateConfig(tau))
        theta = np.r_[init_model(arch, rng).params, init_model(arch, rng).params] * 2
        idx = np.arange(12)
        assert rel_err(obj(theta, idx)[1], central_diff(lambda t: obj(t, idx)[0], theta)) < 1e-4


class TestDann:
    def test_beta(self):
        assert dann_beta(0.0) == 1.0
        assert dann_beta(1.0) == pytest.approx(1.99991, abs=1e-5)
        assert dann_beta(0.0, subtract_one=True) == 0.0
        assert dann_beta(0.3, ease_in=False) == 1.0

    def test_linear_rejected(self, rotate_task):
        with pytest.raises(ValidationError):
            DannObjective(Architecture.linear(2, 3), Architecture.linear(2, 2), rotate_task.source,
                          rotate_task.target_features, DannConfig())

    def _objective(self, seed=0):
        rng = np.random.default_rng(seed)
        s = LabeledSample(rng.standard_normal((8, 2)), rng.integers(0, 3, 8), 3)
        t = UnlabeledSample(rng.standard_normal((6, 2)) + 1)
        arch = Architecture.mlp(2, 3, (4,))
        cfg = DannConfig()
        adv = cfg.adversary_arch(arch.feature_dim)
        obj = DannObjective(arch, adv, s, t, cfg)
        theta = np.r_[init_model(arch, rng).params, init_model(adv, rng).params]
        return obj, theta

    def test_part_gradients(self):
        obj, theta = self._objective()
        idx = np.arange(14)
        P = obj.P
        nll, dom, g_nll, g_dom, g_adv = obj.parts(theta, idx)
        num_nll = central_diff(lambda t: obj.parts(t, idx)[0], theta)
        num_dom = central_diff(lambda t: obj.parts(t, idx)[1], theta)
        assert rel_err(g_nll, num_nll[:P]) < 1e-4
        assert np.abs(num_nll[P:]).max() < 1e-9
        assert rel_err(g_dom, num_dom[:P]) < 1e-4
        assert rel_err(g_adv, num_dom[P:]) < 1e-4

    def test_reversal_composition(self):
        obj, theta = self._objective(1)
        idx = np.arange(14)
        obj.progress = 0.4
        b = obj.beta
        _, _, g_nll, g_dom, g_adv = obj.parts(theta, idx)
        loss, d = obj(theta, idx)
        np.testing.assert_allclose(d, np.r_[g_nll - b * g_dom, b * g_adv])

    def test_identical_domains_confuse_adversary(self):
        t = make_synthetic_task(SyntheticSpec(3, 2, 150, Shift(), seed=5))
        clf, adv = dann_fit(t.source, t.target_features, Architecture.mlp(2, 3, (16,)))
        fs, ft = clf.features(t.source.features), clf.features(t.target.features)
        acc = 0.5 * (np.mean(adv.predict(fs) == 1) + np.mean(adv.predict(ft) == 0))
        assert abs(acc - 0.5) <= 0.1
