"""Small fully connected score network with hand-written backpropagation.

The network maps ``concat(x, time_features(t), e)`` through tanh hidden layers
to a linear output of the data dimension and is trained to predict the score
directly. It follows the scikit-learn estimator conventions: constructor
arguments are hyperparameters, learned state lives in trailing-underscore
attributes, and :meth:`fit` returns ``self``.
"""

import struct

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import as_points, time_column
from .conditions import ConditionEmbedding
from .exceptions import ShapeError, ValidationError

_MAGIC = b"MXDN"
_VERSION = 1


def time_features(t, n_frequencies):
    """Fixed encoding ``[t, sin(pi 2^k t), cos(pi 2^k t)]`` for ``k < n_frequencies``."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    freqs = np.pi * 2.0 ** np.arange(n_frequencies)
    return np.concatenate([t, np.sin(freqs * t), np.cos(freqs * t)], axis=-1)


class MlpScoreNetwork(BaseEstimator):
    """Conditional score network ``s(x, t, e)``.

    Parameters
    ----------
    hidden_sizes : tuple of int
        Width of each tanh hidden layer.
    n_frequencies : int
        Number of sinusoid pairs in the time encoding.
    schedule : NoiseSchedule or None
        Forward process used by :meth:`fit`; the default schedule if None.
    train_config : TrainConfig or None
        Optimisation settings used by :meth:`fit`; defaults if None.
    random_state : int
        Seed for weight initialisation.
    """

    def __init__(self, hidden_sizes=(64, 64, 64), n_frequencies=1, schedule=None,
                 train_config=None, random_state=0):
        self.hidden_sizes = hidden_sizes
        self.n_frequencies = n_frequencies
        self.schedule = schedule
        self.train_config = train_config
        self.random_state = random_state

    # -- structure -------------------------------------------------------

    @property
    def time_dim(self):
        return 1 + 2 * self.n_frequencies

    def initialize(self, dim, embed_dim):
        """Allocate freshly initialised parameters for the given dimensions."""
        if dim < 1 or embed_dim < 0:
            raise ShapeError("data dimension must be >= 1 and embedding dimension >= 0")
        rng = np.random.default_rng(self.random_state)
        widths = [dim + self.time_dim + embed_dim, *self.hidden_sizes, dim]
        self.coefs_ = []
        self.intercepts_ = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.coefs_.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
            self.intercepts_.append(np.zeros(fan_out))
        self.n_features_in_ = dim
        self.embed_dim_ = embed_dim
        return self

    def _check_initialized(self):
        if not hasattr(self, "coefs_"):
            raise NotFittedError("call initialize() or fit() before evaluating the network")

    @property
    def dim(self):
        self._check_initialized()
        return self.n_features_in_

    @property
    def layer_widths(self):
        self._check_initialized()
        return [self.coefs_[0].shape[0]] + [w.shape[1] for w in self.coefs_]

    def get_flat_params(self):
        self._check_initialized()
        return np.concatenate([a.ravel() for pair in zip(self.coefs_, self.intercepts_) for a in pair])

    def set_flat_params(self, flat):
        self._check_initialized()
        flat = np.asarray(flat, dtype=np.float64)
        sizes = [a.size for pair in zip(self.coefs_, self.intercepts_) for a in pair]
        if flat.shape != (sum(sizes),):
            raise ShapeError(f"expected {sum(sizes)} parameters, got {flat.shape}")
        pos = 0
        for i in range(len(self.coefs_)):
            for arrs in (self.coefs_, self.intercepts_):
                n = arrs[i].size
                arrs[i] = flat[pos:pos + n].reshape(arrs[i].shape).copy()
                pos += n
        return self

    # -- forward / backward ---------------------------------------------

    def _inputs(self, x, t, e):
        x = as_points(x, self.n_features_in_)
        batch_shape = x.shape[:-1]
        t = time_column(t, x)
        if t.ndim:
            t = t[..., 0]
        tf = time_features(np.broadcast_to(t, batch_shape), self.n_frequencies)
        vec = e.vector if isinstance(e, ConditionEmbedding) else np.asarray(e, dtype=np.float64)
        if vec.shape[-1] != self.embed_dim_:
            raise ShapeError(f"embedding has dimension {vec.shape[-1]}, expected {self.embed_dim_}")
        vec = np.broadcast_to(vec, batch_shape + (self.embed_dim_,))
        return np.concatenate([x, tf, vec], axis=-1)

    def forward(self, x, t, e):
        """Return ``(output, cache)``; ``cache`` feeds :meth:`backward`."""
        self._check_initialized()
        h = self._inputs(x, t, e)
        activations = [h]
        last = len(self.coefs_) - 1
        for i, (w, b) in enumerate(zip(self.coefs_, self.intercepts_)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            activations.append(h)
        return h, activations

    def evaluate(self, x, t, e):
        return self.forward(x, t, e)[0]

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given ``dloss/doutput``.

        Returns ``(coef_grads, intercept_grads)`` aligned with ``coefs_`` and
        ``intercepts_``. Leading batch axes are summed over.
        """
        grad = np.asarray(grad_out, dtype=np.float64)
        coef_grads = [None] * len(self.coefs_)
        intercept_grads = [None] * len(self.coefs_)
        for i in range(len(self.coefs_) - 1, -1, -1):
            inp = cache[i].reshape(-1, cache[i].shape[-1])
            g2 = grad.reshape(-1, grad.shape[-1])
            coef_grads[i] = inp.T @ g2
            intercept_grads[i] = g2.sum(axis=0)
            if i > 0:
                # cache[i] is tanh output of layer i-1
                grad = (grad @ self.coefs_[i].T) * (1.0 - cache[i] ** 2)
        return coef_grads, intercept_grads

    # -- estimator API ---------------------------------------------------

    def fit(self, X, y):
        """Train on clean data ``X`` (n, d) with per-row embeddings ``y`` (n, d_e)."""
        from .training import TrainConfig, train_on_arrays
        from .schedule import NoiseSchedule

        X = as_points(X)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 2 or len(X) != len(y):
            raise ShapeError("fit expects X of shape (n, d) and y of shape (n, d_e)")
        self.initialize(X.shape[1], y.shape[1])
        sched = self.schedule if self.schedule is not None else NoiseSchedule()
        cfg = self.train_config if self.train_config is not None else TrainConfig()
        self.loss_history_ = train_on_arrays(self, X, y, sched, cfg)
        return self

    # -- serialization ---------------------------------------------------

    def save(self, path):
        """Write parameters as a flat little-endian float64 file with a small header."""
        widths = self.layer_widths
        header = struct.pack(
            f"<4sIIII{len(widths)}I", _MAGIC, _VERSION, self.n_frequencies,
            self.embed_dim_, len(widths), *widths,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.get_flat_params().astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        magic, version, n_freq, embed_dim, n_widths = struct.unpack_from("<4sIIII", blob, 0)
        if magic != _MAGIC or version != _VERSION:
            raise ValidationError(f"{path}: not a mixdiff network file")
        offset = struct.calcsize("<4sIIII")
        widths = struct.unpack_from(f"<{n_widths}I", blob, offset)
        offset += 4 * n_widths
        dim = widths[-1]
        if widths[0] != dim + 1 + 2 * n_freq + embed_dim:
            raise ValidationError(f"{path}: inconsistent header widths {widths}")
        net = cls(hidden_sizes=tuple(widths[1:-1]), n_frequencies=n_freq)
        net.initialize(dim, embed_dim)
        params = np.frombuffer(blob, dtype="<f8", offset=offset)
        net.set_flat_params(params.astype(np.float64))
        return net
