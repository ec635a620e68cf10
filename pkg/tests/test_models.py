import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbadapt.errors import DimensionMismatch, NonFiniteError, ValidationError
from pbadapt.models import (
    Architecture,
    ScoredModel,
    backward,
    disagreement,
    forward,
    init_model,
    load_model,
    save_model,
    split_head,
)

from conftest import central_diff, rel_err


class TestArchitecture:
    def test_param_count(self):
        assert Architecture.linear(2, 3).param_count == 9
        assert Architecture.mlp(2, 3, (4,)).param_count == 2 * 4 + 4 + 4 * 3 + 3

    @pytest.mark.parametrize("args", [
        ("conv", 2, 3, ()), ("linear", 2, 3, (4,)), ("mlp", 2, 3, ()),
        ("mlp", 2, 3, (4, 4, 4, 4)), ("mlp", 2, 3, (0,)), ("linear", 2, 1, ()),
    ])
    def test_invalid(self, args):
        with pytest.raises(ValidationError):
            Architecture(*args)

    def test_param_cap(self):
        with pytest.raises(ValidationError, match="exceeds"):
            Architecture.mlp(256, 10, (256, 256))

    def test_dict_round_trip(self):
        a = Architecture.mlp(5, 4, (8, 3))
        assert Architecture.from_dict(a.to_dict()) == a


class TestScores:
    def test_zero_params(self):
        m = ScoredModel(Architecture.linear(3, 4), np.zeros(16))
        np.testing.assert_array_equal(m.scores(np.ones(3)), np.zeros((1, 4)))

    def test_identity_weights(self):
        w = np.eye(3)
        m = ScoredModel(Architecture.linear(3, 3), np.concatenate([w.ravel(), np.zeros(3)]))
        np.testing.assert_array_equal(m.scores([1.0, 0, 0])[0], w[:, 0])

    def test_finite_fuzz(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            m = init_model(Architecture.mlp(3, 4, (5,)), rng)
            x = rng.standard_normal(3) * 100
            assert np.all(np.isfinite(m.scores(x)))

    def test_rejects_bad_input(self):
        m = init_model(Architecture.linear(2, 2), 0)
        with pytest.raises(DimensionMismatch):
            m.scores(np.zeros(3))
        with pytest.raises(NonFiniteError):
            m.scores([np.nan, 0.0])


class TestPredict:
    def _const(self, s):
        return ScoredModel(Architecture.linear(1, 3), np.concatenate([np.zeros(3), s]))

    def test_tie_least_label(self):
        assert self._const([0.0, 0.0, 0.0]).predict([1.0])[0] == 0

    def test_argmax(self):
        assert self._const([1.0, 3.0, 2.0]).predict([1.0])[0] == 1

    def test_matches_scan(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            m = init_model(Architecture.mlp(2, 4, (3,)), rng)
            x = rng.standard_normal((100, 2))
            s = m.scores(x)
            want = [max(range(4), key=lambda j: (row[j], -j)) for row in s]
            np.testing.assert_array_equal(m.predict(x), want)


class TestSplitHead:
    def test_linear_identity(self):
        m = init_model(Architecture.linear(2, 3), 0)
        f, h = split_head(m)
        x = np.ones((4, 2))
        np.testing.assert_array_equal(f(x), x)
        assert h is m

    def test_recomposition(self):
        rng = np.random.default_rng(5)
        m = init_model(Architecture.mlp(3, 4, (6, 5)), rng)
        x = rng.standard_normal((1000, 3))
        f, h = split_head(m)
        np.testing.assert_allclose(h.scores(f(x)), m.scores(x), rtol=1e-13, atol=1e-13)

    def test_with_head(self):
        m = init_model(Architecture.mlp(2, 3, (4,)), 0)
        h2 = init_model(m.architecture.head_architecture(), 1)
        m2 = m.with_head(h2)
        x = np.random.default_rng(0).standard_normal((5, 2))
        np.testing.assert_allclose(m2.scores(x), h2.scores(m.features(x)))


class TestDisagreement:
    def test_self(self):
        m = init_model(Architecture.linear(2, 3), 0)
        assert disagreement(m, m, np.ones((5, 2))).sum() == 0

    def test_disjoint_constants(self):
        a = ScoredModel(Architecture.linear(1, 2), [0, 0, 1, 0])
        b = ScoredModel(Architecture.linear(1, 2), [0, 0, 0, 1])
        assert np.all(disagreement(a, b, np.arange(6.0)[:, None]) == 1)

    def test_matches_compare(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = (init_model(Architecture.linear(2, 3), rng) for _ in range(2))
            x = rng.standard_normal((50, 2))
            np.testing.assert_array_equal(disagreement(a, b, x), a.predict(x) != b.predict(x))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            disagreement(init_model(Architecture.linear(2, 3), 0), init_model(Architecture.linear(2, 4), 0), np.ones((1, 2)))


class TestBackward:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([(), (3,), (4, 3), (3, 2, 3)]))
    def test_finite_differences(self, seed, hidden):
        rng = np.random.default_rng(seed)
        arch = Architecture.mlp(3, 3, hidden) if hidden else Architecture.linear(3, 3)
        theta = init_model(arch, rng).params.copy()
        x = rng.standard_normal((6, 3))
        c = rng.standard_normal((6, 3))

        def loss(th):
            s, _ = forward(arch, th, x)
            return float(np.sum(c * np.sin(s)))

        s, cache = forward(arch, theta, x)
        g, _ = backward(arch, theta, cache, c * np.cos(s))
        assert rel_err(g, central_diff(loss, theta)) < 1e-4

    def test_input_gradient(self):
        rng = np.random.default_rng(7)
        arch = Architecture.mlp(3, 2, (4,))
        theta = init_model(arch, rng).params
        x = rng.standard_normal((1, 3))
        s, cache = forward(arch, theta, x)
        _, dx = backward(arch, theta, cache, np.ones_like(s))
        num = central_diff(lambda v: float(forward(arch, theta, v.reshape(1, 3))[0].sum()), x.ravel())
        assert rel_err(dx.ravel(), num) < 1e-6


class TestPersistence:
    def test_round_trip(self, tmp_path):
        m = init_model(Architecture.mlp(2, 3, (4,)), 0)
        save_model(m, tmp_path / "m.json")
        m2 = load_model(tmp_path / "m.json")
        assert m2.architecture == m.architecture
        np.testing.assert_array_equal(m2.params, m.params)

    def test_version_check(self, tmp_path):
        from pbadapt.models import model_from_dict, model_to_dict
        d = model_to_dict(init_model(Architecture.linear(2, 2), 0))
        d["version"] = 99
        with pytest.raises(ValidationError):
            model_from_dict(d)
