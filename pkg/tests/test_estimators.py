import math
from dataclasses import replace

import numpy as np
import pytest

from deepes import (
    Dataset,
    EsModel,
    FitConfig,
    LossSpec,
    Mlp,
    build_surrogate,
    fit,
    fit_dqr,
    fit_es,
    fit_two_step,
    fit_upper,
    predict_es,
)
from deepes.estimators import ES_STAGE, default_truncation
from deepes.nn import derive_seed
from deepes.simgen import DgpSpec, ErrorDist, generate


def constant_net(d, c, trunc=None):
    """Network that ignores its input and outputs c."""
    params = np.zeros(d + 1)
    params[-1] = c
    return Mlp((d, 1), params, truncation_bound=trunc)


class TestSurrogate:
    def test_hand_values(self):
        data = Dataset(np.array([[0.5]]), np.array([1.0]))
        z = build_surrogate(data, constant_net(1, 2.0), 0.1)
        assert z[0] == pytest.approx(-0.8, abs=1e-15)
        data = Dataset(np.array([[0.5]]), np.array([3.0]))
        z = build_surrogate(data, constant_net(1, 2.0), 0.1)
        assert z[0] == pytest.approx(0.2, abs=1e-15)

    def test_branch_identity(self):
        # y <= f(x): z = y - (1 - alpha) f(x);  y > f(x): z = alpha f(x)
        rng = np.random.default_rng(0)
        X = rng.random((200, 2))
        y = rng.standard_normal(200)
        f = constant_net(2, 0.3)
        alpha = 0.2
        z = build_surrogate(Dataset(X, y), f, alpha)
        below = y <= 0.3
        assert np.allclose(z[below], y[below] - (1 - alpha) * 0.3, rtol=1e-14)
        assert np.allclose(z[~below], alpha * 0.3, rtol=1e-14)

    def test_callable_quantile_fn(self):
        X = np.linspace(0, 1, 11)[:, None]
        data = Dataset(X, np.zeros(11))
        z = build_surrogate(data, lambda xs: xs[:, 0], 0.5)
        assert z == pytest.approx(np.minimum(-X[:, 0], 0) + 0.5 * X[:, 0])

    def test_nonfinite_quantile_rejected(self):
        data = Dataset(np.zeros((3, 1)), np.zeros(3))
        with pytest.raises(ValueError):
            build_surrogate(data, lambda xs: np.full(3, np.nan), 0.1)

    def test_oracle_surrogate_mean(self):
        # E Z(f0) = alpha * E g0(X); Monte Carlo vs independent check via
        # the surrogate identity E Z = alpha*(E h1 + e_eta * E h2)
        alpha = 0.1
        spec = DgpSpec(model="c1", error=ErrorDist.normal(), n_train=100_000,
                       n_test=64, seed=21)
        train, _, truth = generate(spec, alpha=alpha)
        z = build_surrogate(train, truth.f0, alpha)
        g0 = truth.g0(train.X)
        se = np.std(z, ddof=1) / math.sqrt(train.n)
        assert abs(np.mean(z) - alpha * np.mean(g0)) < 3 * se


@pytest.fixture(scope="module")
def small_sim():
    spec = DgpSpec(model="c1", error=ErrorDist.normal(), n_train=512,
                   n_test=256, seed=3)
    return generate(spec, alpha=0.1)


@pytest.fixture(scope="module")
def light_cfg():
    return FitConfig(learning_rate=1e-3, batch_size=128, max_epochs=40,
                     hidden_plan=(16, 16), seed=5)


class TestFitEs:
    def test_infinite_tau_equals_direct_least_squares(self, small_sim, light_cfg):
        train, _, truth = small_sim
        alpha = 0.1
        qnet = fit_dqr(train, alpha, light_cfg)
        model = fit_es(train, qnet, alpha, math.inf, light_cfg)
        # directly-coded least-squares second stage: same surrogate, same
        # derived seed, squared loss
        z = build_surrogate(train, qnet, alpha)
        es_cfg = replace(light_cfg, seed=derive_seed(light_cfg.seed, ES_STAGE))
        direct, direct_rep = fit(
            Dataset(train.X, z), LossSpec.squared(), es_cfg,
            pred_scale=alpha, truncation=default_truncation(train.y),
        )
        assert np.array_equal(model.es_net.params, direct.params)
        assert model.es_report.train_losses == direct_rep.train_losses
        assert model.tau_used == math.inf

    def test_tau_recorded_and_tail_lower(self, small_sim, light_cfg):
        train, _, _ = small_sim
        qnet = fit_dqr(train, 0.1, light_cfg)
        model = fit_es(train, qnet, 0.1, 2.5, light_cfg)
        assert model.tau_used == 2.5
        assert model.tail == "lower"

    def test_refit_with_frozen_quantile_net_bit_exact(self, small_sim,
                                                      light_cfg, tmp_path):
        from deepes import load_model, save_model

        train, _, _ = small_sim
        qnet = fit_dqr(train, 0.1, light_cfg)
        m1 = fit_es(train, qnet, 0.1, 3.0, light_cfg)
        save_model(tmp_path / "q.model", qnet)
        loaded, _ = load_model(tmp_path / "q.model")
        m2 = fit_es(train, loaded, 0.1, 3.0, light_cfg)
        assert np.array_equal(m1.es_net.params, m2.es_net.params)

    def test_predictions_bounded_by_truncation(self, small_sim, light_cfg):
        train, test, _ = small_sim
        model = fit_two_step(train, 0.1, math.inf, light_cfg)
        m = default_truncation(train.y)
        q, e = predict_es(model, test.X)
        assert np.all(np.abs(q) <= m)
        assert np.all(np.abs(e) <= m)

    def test_tau_rule_object_accepted(self, small_sim, light_cfg):
        from deepes import TauRule, nu2_hat, tau_hat

        train, _, _ = small_sim
        qnet = fit_dqr(train, 0.1, light_cfg)
        model = fit_es(train, qnet, 0.1, TauRule(), light_cfg)
        want = tau_hat(nu2_hat(train, qnet), train.n)
        assert model.tau_used == pytest.approx(want, rel=1e-15)


class TestPredict:
    def test_constant_nets(self):
        model = EsModel(alpha=0.1, quantile_net=constant_net(2, 2.0),
                        es_net=constant_net(2, 1.0), tau_used=math.inf)
        q, e = predict_es(model, np.array([0.2, 0.8]))
        assert (q, e) == (2.0, 1.0)

    def test_upper_negation_identity(self):
        model = EsModel(alpha=0.1, quantile_net=constant_net(2, 2.0),
                        es_net=constant_net(2, 1.0), tau_used=math.inf,
                        tail="upper")
        q, e = predict_es(model, np.array([0.2, 0.8]))
        assert (q, e) == (-2.0, -1.0)

    def test_batch_matches_pointwise_loop(self, small_sim, light_cfg):
        train, test, _ = small_sim
        model = fit_two_step(train, 0.1, 5.0, light_cfg)
        Q, E = predict_es(model, test.X[:100])
        for i in range(100):
            qi, ei = predict_es(model, test.X[i])
            assert qi == Q[i]
            assert ei == E[i]

    def test_dimension_mismatch(self):
        model = EsModel(alpha=0.1, quantile_net=constant_net(2, 2.0),
                        es_net=constant_net(2, 1.0), tau_used=1.0)
        with pytest.raises(ValueError):
            predict_es(model, np.zeros(3))


class TestUpper:
    def test_equals_negated_lower_fit_on_negated_data(self, small_sim,
                                                      light_cfg):
        train, test, _ = small_sim
        up = fit_upper(train, 0.05, 4.0, light_cfg)
        lo = fit_two_step(Dataset(train.X, -train.y), 0.05, 4.0, light_cfg)
        qu, eu = predict_es(up, test.X)
        ql, el = predict_es(lo, test.X)
        assert np.max(np.abs(qu + ql)) == 0.0
        assert np.max(np.abs(eu + el)) == 0.0
        assert up.tail == "upper"

    def test_upper_es_above_upper_quantile(self, light_cfg):
        # predicted upper tail average exceeds the upper quantile for most
        # points (exact for the truth; the fitted nets are unconstrained)
        spec = DgpSpec(model="c1", error=ErrorDist.normal(), n_train=2048,
                       n_test=2000, seed=13)
        train, test, _ = generate(spec)
        cfg = replace(light_cfg, max_epochs=80)
        up = fit_upper(train, 0.05, math.inf, cfg)
        q, e = predict_es(up, test.X)
        assert np.mean(e > q) >= 0.95


class TestDqr:
    def test_location_model_median_mspe(self):
        # y = h1(x) + eta with standard normal eta: the 0.5-quantile is h1
        spec = DgpSpec(model="c1", error=ErrorDist.normal(), n_train=4096,
                       n_test=10_000, seed=17)
        train, test, _ = generate(spec)
        cfg = FitConfig(seed=1)
        qnet = fit_dqr(train, 0.5, cfg)
        from deepes import mspe
        from deepes.simgen import eval_h

        h1 = eval_h("c1", "h1", test.X)
        assert mspe(qnet(test.X), h1) < 0.1

    def test_lower_alpha_predicts_lower(self, small_sim, light_cfg):
        train, test, _ = small_sim
        q05 = fit_dqr(train, 0.05, light_cfg)
        q25 = fit_dqr(train, 0.25, light_cfg)
        assert np.mean(q05(test.X)) < np.mean(q25(test.X))

    def test_degenerate_constant_response(self, light_cfg):
        rng = np.random.default_rng(2)
        X = rng.random((256, 2))
        data = Dataset(X, np.full(256, 4.0))
        cfg = FitConfig(learning_rate=1e-2, batch_size=128, max_epochs=300,
                        hidden_plan=(4,), seed=2)
        net = fit_dqr(data, 0.3, cfg)
        assert abs(float(net(np.array([0.5, 0.5]))) - 4.0) < 1e-2


def test_default_truncation():
    assert default_truncation(np.array([1.0, -3.0])) == 6.0
    assert default_truncation(np.zeros(5)) == 1.0


def test_es_model_validation():
    with pytest.raises(ValueError):
        EsModel(alpha=1.5, quantile_net=constant_net(2, 0.0),
                es_net=constant_net(2, 0.0), tau_used=1.0)
    with pytest.raises(ValueError):
        EsModel(alpha=0.1, quantile_net=constant_net(3, 0.0),
                es_net=constant_net(2, 0.0), tau_used=1.0)
    with pytest.raises(ValueError):
        EsModel(alpha=0.1, quantile_net=constant_net(2, 0.0),
                es_net=constant_net(2, 0.0), tau_used=1.0, tail="sideways")
