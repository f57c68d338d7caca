"""Training objectives and the optimisation loop for :class:`MlpScoreNetwork`.

The objective is ``L_diff + L_prior + style_weight * L_style``. The duration
term of a full TTS model has no analog here and is left out.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_points
from .conditions import analytic_score
from .exceptions import ShapeError, TrainingError, ValidationError

LOSS_WEIGHTS = ("lambda", "unit")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    steps: int = 5000
    style_weight: float = 1e-4
    seed: int = 0
    loss_weight: str = "lambda"
    t_floor: float = 1e-3

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ValidationError(f"steps must be >= 0, got {self.steps}")
        if not self.style_weight >= 0:
            raise ValidationError(f"style_weight must be >= 0, got {self.style_weight}")
        if self.loss_weight not in LOSS_WEIGHTS:
            raise ValidationError(f"loss_weight must be one of {LOSS_WEIGHTS}")
        if not 0 < self.t_floor < 1:
            raise ValidationError(f"t_floor must lie in (0, 1), got {self.t_floor}")


# -- diffusion and prior losses --------------------------------------------


def _sample_t(rng, n, t_floor):
    # uniform on (t_floor, 1]
    return 1.0 - (1.0 - t_floor) * rng.random(n)


def _draw_t_eps(rng, n, dim, t_floor):
    if isinstance(rng, np.random.Generator):
        return _sample_t(rng, n, t_floor), rng.standard_normal((n, dim))
    streams = list(rng)
    if len(streams) != n:
        raise ShapeError(f"{len(streams)} rng streams for a batch of {n}")
    t = np.array([_sample_t(g, 1, t_floor)[0] for g in streams])
    eps = np.stack([g.standard_normal(dim) for g in streams])
    return t, eps


def _denoising_target(sched, eps, t):
    # eps is a standard normal draw; the injected noise is sqrt(lambda) * eps
    lam = sched.lambda_var(t)[:, None]
    return sched.score_target(np.sqrt(lam) * eps, t)


def _loss_weights(sched, t, loss_weight):
    return sched.lambda_var(t) if loss_weight == "lambda" else np.ones_like(t)


def diffusion_loss(model, dist, sched, x0, rng, t_floor=1e-3, loss_weight="lambda"):
    """Weighted denoising score-matching loss for one condition.

    For every row of ``x0`` a time ``t`` in ``(t_floor, 1]`` and a noise draw are
    taken from ``rng``; ``rng`` is either one Generator or a sequence of
    per-sample Generators (which makes the loss independent of batch order).
    """
    x0 = as_points(x0, dist.dim)
    if x0.ndim != 2 or len(x0) == 0:
        raise ShapeError("x0 must be a nonempty (n, d) batch")
    t, eps = _draw_t_eps(rng, len(x0), dist.dim, t_floor)
    x_t = sched.forward_sample(x0, t, eps)
    target = _denoising_target(sched, eps, t)
    resid = model.evaluate(x_t, t, dist.condition) - target
    w = _loss_weights(sched, t, loss_weight)
    return float(np.mean(w * np.sum(resid * resid, axis=-1)))


def prior_loss(x0, mu):
    """Mean of ``0.5 * ||x0 - mu||^2`` (Gaussian NLL with unit variance, constants dropped)."""
    x0 = np.atleast_2d(as_points(x0))
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape[-1] != x0.shape[-1]:
        raise ShapeError(f"mu has dimension {mu.shape[-1]}, x0 has {x0.shape[-1]}")
    diff = x0 - mu
    return float(np.mean(0.5 * np.sum(diff * diff, axis=-1)))


def total_loss(diff, prior, style, style_weight=1e-4):
    return diff + prior + style_weight * style


# -- style loss --------------------------------------------------------------


def gram_matrix(featmap):
    """Normalised Gram matrix ``F F^T / (C L)`` of a ``(C, L)`` feature map."""
    f = np.asarray(featmap, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise ValueError(f"feature map must be a nonempty 2-D array, got shape {f.shape}")
    c, length = f.shape
    return f @ f.T / (c * length)


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "identity": (lambda a: a, lambda a, h: np.ones_like(a)),
}


class FeatureExtractor:
    """Frozen stack of pointwise filter banks standing in for a pretrained encoder.

    Input is a ``(frames, bins)`` array; bins act as input channels and each
    layer computes ``act(W_j @ H_{j-1})`` with ``H_0`` the transposed input.
    """

    def __init__(self, weights, activation="tanh"):
        if activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        if not weights:
            raise ValidationError("extractor needs at least one layer")
        ws = []
        for i, w in enumerate(weights):
            w = np.array(w, dtype=np.float64)
            if w.ndim != 2 or (ws and w.shape[1] != ws[-1].shape[0]):
                raise ShapeError(f"layer {i} weight has incompatible shape {w.shape}")
            w.setflags(write=False)
            ws.append(w)
        self.weights = tuple(ws)
        self.activation = activation

    @classmethod
    def random(cls, in_channels, channels=(8, 8), seed=0, activation="tanh"):
        rng = np.random.default_rng(seed)
        weights, prev = [], in_channels
        for c in channels:
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(prev), size=(c, prev)))
            prev = c
        return cls(weights, activation)

    @property
    def in_channels(self):
        return self.weights[0].shape[1]

    def features(self, m):
        """Per-layer feature maps (pre-activation, post-activation) for input ``m``."""
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != self.in_channels:
            raise ShapeError(f"expected a (frames, {self.in_channels}) array, got {m.shape}")
        act = _ACTIVATIONS[self.activation][0]
        h = m.T
        out = []
        for w in self.weights:
            a = w @ h
            h = act(a)
            out.append((a, h))
        return out


def style_loss_and_grad(extractor, m_hat, m):
    """Style loss and its gradient with respect to ``m_hat``."""
    m_hat = np.asarray(m_hat, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m_hat.shape != m.shape:
        raise ShapeError(f"style inputs differ in shape: {m_hat.shape} vs {m.shape}")
    feats_hat = extractor.features(m_hat)
    feats_ref = extractor.features(m)
    loss = 0.0
    grads_h = []
    for (_, h_hat), (_, h_ref) in zip(feats_hat, feats_ref):
        d = gram_matrix(h_hat) - gram_matrix(h_ref)
        loss += float(np.sum(d * d))
        c, length = h_hat.shape
        grads_h.append(4.0 * d @ h_hat / (c * length))
    dact = _ACTIVATIONS[extractor.activation][1]
    g = np.zeros_like(feats_hat[-1][1])
    for j in range(len(extractor.weights) - 1, -1, -1):
        a, h = feats_hat[j]
        g = (g + grads_h[j]) * dact(a, h)
        g = extractor.weights[j].T @ g
    return loss, g.T


def style_loss(extractor, m_hat, m):
    """Sum over layers of squared Frobenius distances between Gram matrices."""
    return style_loss_and_grad(extractor, m_hat, m)[0]


# -- optimisation -------------------------------------------------------------


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


HISTORY_FIELDS = ("step", "diff", "prior", "style", "total")


def loss_and_gradients(net, sched, x0, emb, mu, t, eps, config, extractor=None):
    """Objective and parameter gradients on one batch with fixed draws.

    Returns ``(parts, coef_grads, intercept_grads)`` where ``parts`` is
    ``(diff, prior, style, total)``.
    """
    n = len(x0)
    x_t = sched.forward_sample(x0, t, eps)
    target = _denoising_target(sched, eps, t)
    out, cache = net.forward(x_t, t, emb)
    w = _loss_weights(sched, t, config.loss_weight)
    resid = out - target
    l_diff = float(np.mean(w * np.sum(resid * resid, axis=-1)))
    grad_out = (2.0 / n) * w[:, None] * resid
    l_prior = prior_loss(x0, mu)

    l_style = 0.0
    if extractor is not None and config.style_weight > 0:
        a = sched.alpha(t)[:, None]
        lam = sched.lambda_var(t)[:, None]
        # one-shot estimate of the clean batch from the predicted score
        x0_hat = (x_t + lam * out) / a
        l_style, g_hat = style_loss_and_grad(extractor, x0_hat, x0)
        grad_out = grad_out + config.style_weight * g_hat * lam / a
    total = total_loss(l_diff, l_prior, l_style, config.style_weight)
    cg, ig = net.backward(cache, grad_out)
    return (l_diff, l_prior, l_style, total), cg, ig


def _run(net, sched, config, draw_batch, extractor):
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.coefs_ + net.intercepts_, lr=config.learning_rate)
    history = np.zeros((config.steps, len(HISTORY_FIELDS)))
    for step in range(config.steps):
        x0, emb, mu = draw_batch(rng, config.batch_size)
        t = _sample_t(rng, config.batch_size, config.t_floor)
        eps = rng.standard_normal(x0.shape)
        parts, cg, ig = loss_and_gradients(net, sched, x0, emb, mu, t, eps, config, extractor)
        if not np.isfinite(parts[-1]):
            raise TrainingError(step)
        opt.step(cg + ig)
        history[step] = (step, *parts)
    return history


def train(net, dists, sched, config):
    """Fit ``net`` on fresh draws from the condition distributions ``dists``.

    Each batch row picks a condition uniformly at random. ``net`` is
    initialised if it has no parameters yet. Returns ``(net, history)`` with
    ``history`` an array of rows ``(step, diff, prior, style, total)``.
    """
    dists = list(dists)
    if not dists:
        raise ValidationError("train needs at least one condition distribution")
    dim = dists[0].dim
    embeds = np.stack([d.condition.vector for d in dists])
    mus = np.stack([d.mean() for d in dists])
    if not hasattr(net, "coefs_"):
        net.initialize(dim, embeds.shape[1])

    def draw(rng, n):
        ks = rng.integers(len(dists), size=n)
        x0 = np.empty((n, dim))
        for k in range(len(dists)):
            rows = ks == k
            x0[rows] = dists[k].sample(int(rows.sum()), rng)
        return x0, embeds[ks], mus[ks]

    extractor = FeatureExtractor.random(dim, seed=config.seed)
    return net, _run(net, sched, config, draw, extractor)


def train_on_arrays(net, X, E, sched, config):
    """Minibatch training on a fixed dataset; the prior mean is per-embedding."""
    keys, inverse = np.unique(E, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mus = np.stack([X[inverse == k].mean(axis=0) for k in range(len(keys))])

    def draw(rng, n):
        idx = rng.integers(len(X), size=n)
        return X[idx], E[idx], mus[inverse[idx]]

    extractor = FeatureExtractor.random(X.shape[1], seed=config.seed)
    return _run(net, sched, config, draw, extractor)


def objective_on_draws(net, dists, sched, config, n=20000, seed=0):
    """Objective parts of ``net`` on one fixed, seeded set of draws.

    Evaluating two parameter settings with the same ``seed`` compares them on
    identical data, times and noise, which cancels the large irreducible
    variance that dominates single-batch training losses.
    """
    dists = list(dists)
    rng = np.random.default_rng(seed)
    ks = rng.integers(len(dists), size=n)
    x0 = np.empty((n, dists[0].dim))
    for k, dist in enumerate(dists):
        rows = ks == k
        x0[rows] = dist.sample(int(rows.sum()), rng)
    emb = np.stack([d.condition.vector for d in dists])[ks]
    mu = np.stack([d.mean() for d in dists])[ks]
    t = _sample_t(rng, n, config.t_floor)
    eps = rng.standard_normal(x0.shape)
    extractor = FeatureExtractor.random(dists[0].dim, seed=config.seed)
    parts, _, _ = loss_and_gradients(net, sched, x0, emb, mu, t, eps, config, extractor)
    return parts


def score_matching_error(model, dist, sched, n, rng, t_floor=1e-3):
    """Mean squared distance from the exact score over ``t ~ U(t_floor, 1]``, ``x ~ p_t``.

    ``model=None`` measures the all-zero model.
    """
    t = _sample_t(rng, n, t_floor)
    x0 = dist.sample(n, rng)
    x_t = sched.forward_sample(x0, t, rng.standard_normal(x0.shape))
    exact = analytic_score(dist, sched, x_t, t)
    pred = 0.0 if model is None else model.evaluate(x_t, t, dist.condition)
    return float(np.mean(np.sum((pred - exact) ** 2, axis=-1)))
