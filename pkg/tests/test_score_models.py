import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mixdiff import (AnalyticScoreModel, ConditionEmbedding, DomainError, GaussianMixture,
                     MlpScoreNetwork, ShapeError, TrainConfig, ValidationError,
                     analytic_log_density, analytic_marginal, analytic_score, embed_average,
                     one_hot_embeddings)
from mixdiff.network import time_features

from helpers import central_diff_grad

E2 = ConditionEmbedding("c", [1.0, 0.0])


def gaussian(mean, var, label="c"):
    return GaussianMixture.gaussian(ConditionEmbedding(label, [1.0, 0.0]), mean, var)


# -- distributions and embeddings ---------------------------------------------


def test_embedding_is_frozen():
    e = ConditionEmbedding("a", [1.0, 2.0])
    with pytest.raises(ValueError):
        e.vector[0] = 3.0
    with pytest.raises(DomainError):
        ConditionEmbedding("bad", [np.inf])


def test_one_hot_embeddings():
    embs = one_hot_embeddings(["a", "b", "c"])
    assert [e.label for e in embs] == ["a", "b", "c"]
    assert np.array_equal(np.stack([e.vector for e in embs]), np.eye(3))


@pytest.mark.parametrize("kw", [
    dict(weights=[0.5, 0.4], means=[[0, 0], [1, 1]], variances=[1, 1]),
    dict(weights=[1.0, 0.0], means=[[0, 0], [1, 1]], variances=[1, 1]),
    dict(weights=[1.0], means=[[0, 0]], variances=[0.0]),
    dict(weights=[1.0], means=[[np.nan, 0]], variances=[1.0]),
])
def test_invalid_mixture_rejected(kw):
    with pytest.raises(ValidationError):
        GaussianMixture(E2, **kw)


def test_mixture_shape_mismatch():
    with pytest.raises(ShapeError):
        GaussianMixture(E2, [0.5, 0.5], [[0, 0]], [1, 1])


def test_embed_average():
    v = np.array([0.3, -1.2, 4.0])
    np.testing.assert_allclose(embed_average([v, v, v]), v, rtol=1e-15)
    assert np.array_equal(embed_average([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])
    with pytest.raises(ValueError):
        embed_average([])
    with pytest.raises(ShapeError):
        embed_average([[1.0, 0.0], [1.0]])


def test_embed_average_concentrates():
    rng = np.random.default_rng(1)
    v = np.array([1.0, -2.0, 0.5])
    errs = [np.max(np.abs(embed_average(v + math.sqrt(eps) * rng.standard_normal((100, 3))) - v))
            for eps in (1e-2, 1e-4, 1e-6)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_analytic_marginal(sched):
    d = gaussian([1.0, 0.0], 1.0)
    same = analytic_marginal(d, sched, 0.0)
    assert np.array_equal(same.means, d.means) and np.array_equal(same.variances, d.variances)
    # time where alpha = 0.5, found by root finding on the schedule
    t = optimize.brentq(lambda s: sched.alpha(s) - 0.5, 1e-9, 1.0, xtol=1e-15)
    m = analytic_marginal(d, sched, t)
    np.testing.assert_allclose(m.means, [[0.5, 0.0]], rtol=1e-12)
    np.testing.assert_allclose(m.variances, [1.0], rtol=1e-12)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_score_zero_at_mode_and_symmetric_centre(sched):
    d = gaussian([1.0, -2.0], 0.3)
    t = 0.4
    np.testing.assert_allclose(analytic_score(d, sched, sched.alpha(t) * d.means[0], t), 0.0,
                               atol=1e-15)
    sym = GaussianMixture(E2, [0.5, 0.5], [[1.5, 0.5], [-1.5, -0.5]], [0.2, 0.2])
    np.testing.assert_allclose(analytic_score(sym, sched, np.zeros(2), t), 0.0, atol=1e-15)


def test_single_gaussian_score_is_affine(sched, rng):
    m, var = np.array([2.0, -1.0]), 0.25
    d = gaussian(m, var)
    for _ in range(200):
        t = rng.uniform(0, 1)
        x = rng.uniform(-5, 5, size=2)
        a = math.exp(-0.5 * (0.05 * t + 0.5 * 19.95 * t * t))
        expect = -(x - a * m) / (a * a * var + 1 - a * a)
        np.testing.assert_allclose(analytic_score(d, sched, x, t), expect, rtol=1e-12, atol=1e-12)


def test_score_matches_finite_differences(layout, sched, rng):
    mix = GaussianMixture(E2, [0.2, 0.5, 0.3], [[1, 1], [-2, 0], [0, 3]], [0.1, 0.4, 0.7])
    for dist in [*layout, mix]:
        for _ in range(25):
            t = rng.uniform(0.01, 1.0)
            x = rng.uniform(-4, 4, size=2)
            fd = central_diff_grad(lambda y: analytic_log_density(dist, sched, y, t), x)
            s = analytic_score(dist, sched, x, t)
            assert np.linalg.norm(s - fd) / max(np.linalg.norm(fd), 1e-8) < 1e-6


def test_log_density_values(sched):
    std = GaussianMixture.gaussian(ConditionEmbedding("s", [1.0]), [0.0], 1.0)
    assert analytic_log_density(std, sched, [0.0], 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi),
                                                                         abs=1e-14)
    assert analytic_log_density(std, sched, [1.0], 0.0) == pytest.approx(-1.41894, abs=1e-5)
    d3 = GaussianMixture.gaussian(ConditionEmbedding("s", [1.0]), [0.0, 0.0, 0.0], 1.0)
    assert analytic_log_density(d3, sched, np.zeros(3), 0.0) == pytest.approx(
        -1.5 * math.log(2 * math.pi), abs=1e-14)


@pytest.mark.parametrize("t", [0.0, 0.05, 0.6])
def test_log_density_integrates_to_one(sched, t):
    d = GaussianMixture(ConditionEmbedding("s", [1.0]), [0.3, 0.7], [[-1.0], [2.0]], [0.2, 0.5])
    grid = np.linspace(-15, 15, 60001)
    dens = np.exp(analytic_log_density(d, sched, grid[:, None], t))
    assert abs(integrate.trapezoid(dens, grid) - 1.0) < 1e-3


def test_score_supports_per_row_times(sched, rng):
    d = gaussian([1.0, 1.0], 0.5)
    x = rng.normal(size=(5, 2))
    t = rng.uniform(0.1, 1, size=5)
    batched = analytic_score(d, sched, x, t)
    rows = np.stack([analytic_score(d, sched, x[i], t[i]) for i in range(5)])
    np.testing.assert_allclose(batched, rows, rtol=1e-14)


def test_oracle_lookup(layout, sched):
    model = AnalyticScoreModel(layout, sched)
    happy = layout[1].condition
    x = np.array([0.3, 0.1])
    by_label = model.evaluate(x, 0.5, happy)
    by_vector = model.evaluate(x, 0.5, happy.vector.copy())
    assert np.array_equal(by_label, by_vector)
    with pytest.raises(DomainError):
        model.evaluate(x, 0.5, embed_average([layout[0].condition, happy]))


def test_oracle_rejects_duplicate_labels(layout, sched):
    with pytest.raises(ValidationError):
        AnalyticScoreModel([layout[0], layout[0]], sched)


# -- network -------------------------------------------------------------------


def small_net(hidden=(5, 4), seed=3, dim=2, embed=3):
    return MlpScoreNetwork(hidden_sizes=hidden, n_frequencies=2, random_state=seed).initialize(dim, embed)


def test_time_features():
    f = time_features(np.array([0.0, 0.25]), 2)
    expect = np.array([[0, 0, 0, 1, 1],
                       [0.25, math.sin(math.pi / 4), math.sin(math.pi / 2),
                        math.cos(math.pi / 4), math.cos(math.pi / 2)]])
    np.testing.assert_allclose(f, expect, atol=1e-15)


def test_zero_network_outputs_zero():
    net = small_net()
    net.set_flat_params(np.zeros_like(net.get_flat_params()))
    assert np.array_equal(net.evaluate(np.ones((4, 2)), 0.5, np.ones(3)), np.zeros((4, 2)))


def test_network_deterministic():
    a, b = small_net(seed=11), small_net(seed=11)
    x = np.array([[0.2, -0.4]])
    out = a.evaluate(x, 0.3, np.ones(3))
    assert np.array_equal(out, a.evaluate(x, 0.3, np.ones(3)))
    assert np.array_equal(out, b.evaluate(x, 0.3, np.ones(3)))


def test_single_linear_layer_is_affine():
    net = MlpScoreNetwork(hidden_sizes=(), n_frequencies=1, random_state=0).initialize(2, 1)
    w = np.arange(12, dtype=float).reshape(6, 2) / 10.0  # inputs: x(2), t, sin, cos, e(1)
    b = np.array([0.5, -0.5])
    net.coefs_[0], net.intercepts_[0] = w, b
    x, t, e = np.array([1.0, 2.0]), 0.5, np.array([3.0])
    inp = np.array([1.0, 2.0, 0.5, math.sin(math.pi / 2), math.cos(math.pi / 2), 3.0])
    np.testing.assert_allclose(net.evaluate(x, t, e), inp @ w + b, rtol=1e-14, atol=1e-15)


def test_network_shape_errors():
    net = small_net()
    with pytest.raises(ShapeError):
        net.evaluate(np.ones(3), 0.5, np.ones(3))
    with pytest.raises(ShapeError):
        net.evaluate(np.ones(2), 0.5, np.ones(2))
    with pytest.raises(NotFittedError):
        MlpScoreNetwork().evaluate(np.ones(2), 0.5, np.ones(3))


@pytest.mark.parametrize("hidden", [(6,), (5, 4), (3, 3, 3)])
def test_backward_matches_finite_differences(hidden, rng):
    net = small_net(hidden, seed=int(rng.integers(1000)))
    x, t = rng.normal(size=(7, 2)), rng.uniform(0.05, 1, size=7)
    e, target = rng.normal(size=3), rng.normal(size=(7, 2))

    def loss(flat):
        net.set_flat_params(flat)
        return 0.5 * np.sum((net.evaluate(x, t, e) - target) ** 2)

    p0 = net.get_flat_params()
    out, cache = net.forward(x, t, e)
    cg, ig = net.backward(cache, out - target)
    grad = np.concatenate([a.ravel() for pair in zip(cg, ig) for a in pair])
    fd = central_diff_grad(loss, p0)
    rel = np.abs(fd - grad) / np.maximum(np.maximum(np.abs(fd), np.abs(grad)), 1e-8)
    assert np.max(rel) < 1e-4


def test_zero_output_loss_gives_zero_gradient():
    net = small_net()
    out, cache = net.forward(np.ones((3, 2)), 0.4, np.ones(3))
    cg, ig = net.backward(cache, np.zeros_like(out))
    assert all(np.all(g == 0) for g in cg + ig)


def test_gradient_descent_on_one_parameter_quadratic():
    # a net with no hidden layer and only the output bias free is a 1-D quadratic in that bias
    net = MlpScoreNetwork(hidden_sizes=(), n_frequencies=1).initialize(1, 0)
    net.coefs_[0][:] = 0.0
    target = np.full((4, 1), 2.5)
    for _ in range(200):
        out, cache = net.forward(np.zeros((4, 1)), 0.5, np.zeros(0))
        _, ig = net.backward(cache, (out - target) / 4)
        net.intercepts_[0] -= 0.1 * ig[0]
    assert net.intercepts_[0][0] == pytest.approx(2.5, abs=1e-8)


def test_save_load_roundtrip(tmp_path):
    net = small_net()
    path = tmp_path / "net.bin"
    net.save(path)
    back = MlpScoreNetwork.load(path)
    assert back.layer_widths == net.layer_widths
    assert np.array_equal(back.get_flat_params(), net.get_flat_params())
    x = np.array([[0.1, 0.2]])
    assert np.array_equal(back.evaluate(x, 0.7, np.ones(3)), net.evaluate(x, 0.7, np.ones(3)))
    blob = path.read_bytes()
    n_params = len(net.get_flat_params())
    assert len(blob) == 20 + 4 * len(net.layer_widths) + 8 * n_params
    np.testing.assert_array_equal(np.frombuffer(blob[-8 * n_params:], dtype="<f8"),
                                  net.get_flat_params())


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValidationError):
        MlpScoreNetwork.load(p)


def test_estimator_api(rng):
    net = MlpScoreNetwork(hidden_sizes=(8,), random_state=4,
                          train_config=TrainConfig(steps=20, batch_size=8))
    params = net.get_params()
    assert params["hidden_sizes"] == (8,) and params["random_state"] == 4
    assert not hasattr(clone(net), "coefs_")
    X = rng.normal(size=(40, 2))
    y = np.repeat(np.eye(2), 20, axis=0)
    assert net.fit(X, y) is net
    assert net.dim == 2 and net.embed_dim_ == 2
    assert net.evaluate(X[:3], 0.5, y[0]).shape == (3, 2)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_network_output_width_and_finiteness(x, t):
    net = small_net()
    out = net.evaluate(np.array(x), t, np.ones(3))
    assert out.shape == (2,) and np.all(np.isfinite(out))
