"""Condition embeddings and Gaussian-mixture condition distributions.

Each condition ("emotion") owns an isotropic Gaussian mixture over data
space. Pushing that mixture through the forward process keeps it a mixture,
so the time-``t`` log density and score are available in closed form and
serve as the ground-truth score model.
"""

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from ._validation import as_points, as_vector, check_time
from .exceptions import DomainError, ShapeError, ValidationError
from .schedule import NoiseSchedule

LOG_2PI = np.log(2.0 * np.pi)

DEFAULT_LABELS = ("Neutral", "Happy", "Sad", "Surprise")


@dataclass(frozen=True, eq=False)
class ConditionEmbedding:
    label: str
    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", as_vector(self.vector, name=f"embedding {self.label!r}"))
        self.vector.setflags(write=False)

    @property
    def dim(self):
        return self.vector.shape[0]


def one_hot_embeddings(labels):
    """One-hot embedding per label, in the given order."""
    eye = np.eye(len(labels))
    return [ConditionEmbedding(lab, eye[i]) for i, lab in enumerate(labels)]


def embed_average(vectors):
    """Componentwise mean of a nonempty set of embedding vectors.

    Accepts raw vectors or :class:`ConditionEmbedding` instances; used to
    build a stable condition from several references of the same class.
    """
    vecs = [v.vector if isinstance(v, ConditionEmbedding) else as_vector(v) for v in vectors]
    if not vecs:
        raise ValueError("cannot average an empty set of embeddings")
    dims = {v.shape[0] for v in vecs}
    if len(dims) != 1:
        raise ShapeError(f"embeddings have differing dimensions {sorted(dims)}")
    return np.mean(np.stack(vecs), axis=0)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Isotropic Gaussian mixture attached to one condition.

    Attributes:
        condition: the embedding this distribution belongs to.
        weights: ``(K,)`` mixture weights, positive and summing to one.
        means: ``(K, d)`` component means.
        variances: ``(K,)`` isotropic component variances.
    """

    condition: ConditionEmbedding
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        m = np.asarray(self.means, dtype=np.float64)
        if m.ndim == 1:
            m = m[None, :]
        v = np.atleast_1d(np.asarray(self.variances, dtype=np.float64))
        if not (w.ndim == 1 and m.ndim == 2 and v.ndim == 1 and len(w) == len(m) == len(v)):
            raise ShapeError(
                f"mixture arrays disagree: weights {w.shape}, means {m.shape}, variances {v.shape}"
            )
        if len(w) == 0:
            raise ValidationError("mixture needs at least one component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"mixture weights must be positive and sum to 1, got {w}")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValidationError(f"mixture variances must be positive, got {v}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("mixture means must be finite")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def gaussian(cls, condition, mean, variance):
        return cls(condition, [1.0], [mean], [variance])

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def label(self):
        return self.condition.label

    def mean(self):
        """Overall mixture mean."""
        return self.weights @ self.means

    def covariance(self):
        """Overall mixture covariance (a full matrix, the mixture need not be isotropic)."""
        mu = self.mean()
        diff = self.means - mu
        eye = np.eye(self.dim)
        return sum(
            w * (s * eye + np.outer(dm, dm))
            for w, s, dm in zip(self.weights, self.variances, diff)
        )

    def sample(self, n, rng):
        """Draw ``n`` points; returns an ``(n, d)`` array."""
        ks = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[ks] + np.sqrt(self.variances[ks])[:, None] * z


def default_layout(embeddings=None):
    """The four-condition 2-D layout: Neutral at the origin, three emotions around it."""
    if embeddings is None:
        embeddings = one_hot_embeddings(DEFAULT_LABELS)
    by_label = {e.label: e for e in embeddings}
    placement = {
        "Neutral": ((0.0, 0.0), 0.5),
        "Happy": ((2.0, 0.0), 0.25),
        "Sad": ((-2.0, 0.0), 0.25),
        "Surprise": ((0.0, 2.0), 0.25),
    }
    return [GaussianMixture.gaussian(by_label[lab], m, v) for lab, (m, v) in placement.items()]


def analytic_marginal(dist, sched, t):
    """Push a mixture through the forward process up to a single time ``t``."""
    t = float(check_time(t, sched.horizon))
    a = float(sched.alpha(t))
    lam = float(sched.lambda_var(t))
    return GaussianMixture(dist.condition, dist.weights, a * dist.means, a * a * dist.variances + lam)


def _marginal_arrays(dist, sched, t):
    # returns (log_weights, means, variances) broadcastable against (..., K, d)
    t = np.asarray(check_time(t, sched.horizon))
    a = sched.alpha(t)[..., None]
    lam = sched.lambda_var(t)[..., None]
    variances = a * a * dist.variances + lam  # (..., K)
    means = a[..., None] * dist.means  # (..., K, d)
    return np.log(dist.weights), means, variances


def _component_log_terms(dist, sched, x, t):
    x = as_points(x, dist.dim)
    log_w, means, variances = _marginal_arrays(dist, sched, t)
    diff = x[..., None, :] - means  # (..., K, d)
    sq = np.sum(diff * diff, axis=-1)
    d = dist.dim
    logs = log_w - 0.5 * sq / variances - 0.5 * d * (LOG_2PI + np.log(variances))
    return logs, diff, variances


def analytic_log_density(dist, sched, x, t):
    """Log density of the time-``t`` marginal at ``x`` (shape ``(..., d)``)."""
    logs, _, _ = _component_log_terms(dist, sched, x, t)
    return logsumexp(logs, axis=-1)


def analytic_score(dist, sched, x, t):
    """Exact ``grad_x log p_t(x)`` of the pushed-forward mixture."""
    logs, diff, variances = _component_log_terms(dist, sched, x, t)
    resp = softmax(logs, axis=-1)
    return -np.sum((resp / variances)[..., None] * diff, axis=-2)


class ScoreModel(Protocol):
    """Anything that evaluates a conditional score ``(x, t, e) -> (..., d)``."""

    def evaluate(self, x, t, e): ...


def _embedding_vector(e):
    return e.vector if isinstance(e, ConditionEmbedding) else as_vector(e, name="embedding")


@dataclass(eq=False)
class AnalyticScoreModel:
    """Ground-truth score model over a set of known condition distributions.

    Conditions are looked up by label when given a :class:`ConditionEmbedding`
    with a known label, otherwise by exact vector match. Embeddings that match
    no distribution (averages, interpolations) are rejected since the oracle has
    no density for them.
    """

    distributions: Sequence[GaussianMixture]
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __post_init__(self):
        self.distributions = list(self.distributions)
        labels = [d.label for d in self.distributions]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate condition labels: {labels}")
        dims = {d.dim for d in self.distributions}
        if len(dims) != 1:
            raise ShapeError(f"distributions disagree on data dimension: {sorted(dims)}")
        self._by_label = {d.label: d for d in self.distributions}

    @property
    def dim(self):
        return self.distributions[0].dim

    def distribution_for(self, e):
        if isinstance(e, ConditionEmbedding) and e.label in self._by_label:
            return self._by_label[e.label]
        vec = _embedding_vector(e)
        for dist in self.distributions:
            cv = dist.condition.vector
            if cv.shape == vec.shape and np.array_equal(cv, vec):
                return dist
        raise DomainError("embedding does not correspond to any known condition distribution")

    def evaluate(self, x, t, e):
        return analytic_score(self.distribution_for(e), self.schedule, x, t)

    def log_density(self, x, t, e):
        return analytic_log_density(self.distribution_for(e), self.schedule, x, t)
