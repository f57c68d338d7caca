"""Bayes-posterior probe and the evaluation metrics built on it.

The probe classifies finished samples by the exact posterior over the known
clean condition distributions. It plays the role of an emotion recogniser's
softmax output when judging how much of each condition a mix carries.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import as_points
from .conditions import analytic_log_density
from .exceptions import ShapeError, ValidationError
from .sampler import MixSpec, intensity_sample, sample_mixed
from .schedule import NoiseSchedule
from .seeding import stream_seed

INTENSITY_BUCKETS = {
    "weak": (0.1, 0.2, 0.3),
    "medium": (0.4, 0.5, 0.6),
    "strong": (0.7, 0.8),
}
DEFAULT_GAMMAS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)

_CLEAN = NoiseSchedule()


def posterior(conditions, priors, x):
    """Posterior class probabilities ``p(c | x)`` at ``t = 0``; shape ``(..., C)``."""
    conditions = list(conditions)
    priors = np.asarray(priors, dtype=np.float64)
    if priors.shape != (len(conditions),):
        raise ShapeError(f"{len(priors)} priors for {len(conditions)} conditions")
    if np.any(priors <= 0) or abs(priors.sum() - 1.0) > 1e-12:
        raise ValidationError(f"priors must be positive and sum to 1, got {priors}")
    x = as_points(x, conditions[0].dim)
    logp = np.stack([analytic_log_density(c, _CLEAN, x, 0.0) for c in conditions], axis=-1)
    return softmax(logp + np.log(priors), axis=-1)


class BayesProbe(BaseEstimator, ClassifierMixin):
    """Exact Bayes classifier over a fixed set of condition distributions.

    ``fit`` takes no training data; it validates the distributions and fixes
    ``classes_`` (the condition labels) and the prior. Equal priors by default.
    """

    def __init__(self, distributions=(), priors=None):
        self.distributions = distributions
        self.priors = priors

    def fit(self, X=None, y=None):
        dists = list(self.distributions)
        if not dists:
            raise ValidationError("BayesProbe needs at least one distribution")
        self.classes_ = np.array([d.label for d in dists])
        if len(set(self.classes_)) != len(dists):
            raise ValidationError(f"duplicate labels in {self.classes_.tolist()}")
        n = len(dists)
        self.priors_ = np.full(n, 1.0 / n) if self.priors is None else np.asarray(self.priors, float)
        self.distributions_ = dists
        return self

    def predict_proba(self, X):
        if not hasattr(self, "classes_"):
            self.fit()
        return posterior(self.distributions_, self.priors_, X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=-1)]

    def index(self, label):
        hits = np.flatnonzero(self.classes_ == label)
        if len(hits) == 0:
            raise ValidationError(f"probe has no condition {label!r}")
        return int(hits[0])


@dataclass
class ProbabilityCurve:
    """Mean probe probabilities per mixing weight.

    ``means`` and ``stderr`` have shape ``(len(gammas), len(labels))``.
    """

    gammas: np.ndarray
    labels: list
    means: np.ndarray
    stderr: np.ndarray
    batch_size: int
    descriptor: str

    def column(self, label):
        return self.means[:, self.labels.index(label)]

    def stderr_column(self, label):
        return self.stderr[:, self.labels.index(label)]


def probability_curve(model, sched, base, mixin, probe, cfg, gammas=DEFAULT_GAMMAS,
                      batch_size=500, k_max=0.6, k_min=0.2):
    """Mean posterior of every condition for a batch of mixed samples per weight.

    Every weight reuses ``cfg.seed``, so rows differ only through the mix and
    not through the noise draws (common random numbers).
    """
    gammas = np.asarray(gammas, dtype=np.float64)
    if gammas.ndim != 1 or len(gammas) == 0:
        raise ValidationError("gamma grid must be a nonempty 1-D sequence")
    means, errs = [], []
    for g in gammas:
        mix = MixSpec.dual(base, mixin, float(g), k_max=k_max, k_min=k_min)
        xs = sample_mixed(model, sched, mix, cfg, size=batch_size)
        p = probe.predict_proba(xs)
        means.append(p.mean(axis=0))
        errs.append(p.std(axis=0, ddof=1) / np.sqrt(batch_size) if batch_size > 1
                    else np.zeros(p.shape[1]))
    return ProbabilityCurve(
        gammas=gammas,
        labels=list(probe.classes_),
        means=np.array(means),
        stderr=np.array(errs),
        batch_size=batch_size,
        descriptor=f"{base.label}->{mixin.label}@{k_max:g}/{k_min:g}",
    )


@dataclass
class ConfusionMatrix:
    """Counts of evaluation batches, rows = intended bucket, columns = assigned bucket."""

    buckets: list
    counts: np.ndarray
    centroids: np.ndarray
    batch_means: dict

    @property
    def diagonal_fraction(self):
        return float(np.trace(self.counts) / self.counts.sum())


def _bucket_batch_means(model, sched, neutral, target, probe, cfg, gammas, n_batches,
                        batch_size, purpose, k_max, k_min):
    col = probe.index(target.label)
    out = []
    for b in range(n_batches):
        gamma = gammas[b % len(gammas)]
        bcfg = replace(cfg, seed=stream_seed(cfg.seed, purpose, b))
        xs = intensity_sample(model, sched, neutral, target, gamma, bcfg, size=batch_size,
                              k_max=k_max, k_min=k_min)
        out.append(float(probe.predict_proba(xs)[:, col].mean()))
    return np.array(out)


def intensity_confusion(model, sched, neutral, target, probe, cfg, buckets=None,
                        batches_per_bucket=20, batch_size=500, k_max=0.6, k_min=0.2,
                        calibration_purpose="calibration", evaluation_purpose="evaluation"):
    """Intended-vs-recovered intensity bucket counts.

    Each bucket lists the weights it cycles through. Centroids are the bucket
    means of probe ``P(target)`` over a calibration run; every evaluation batch
    is then assigned to the bucket with the nearest centroid. Passing the same
    purpose string for calibration and evaluation reuses identical seeds.
    """
    buckets = dict(INTENSITY_BUCKETS if buckets is None else buckets)
    if batches_per_bucket < 1:
        raise ValidationError("batches_per_bucket must be >= 1")
    for name, gs in buckets.items():
        if len(gs) == 0:
            raise ValueError(f"bucket {name!r} has no weights")
    names = list(buckets)
    centroids, evals = [], {}
    for i, name in enumerate(names):
        args = (model, sched, neutral, target, probe, cfg, tuple(buckets[name]),
                batches_per_bucket, batch_size)
        calib = _bucket_batch_means(*args, f"{calibration_purpose}/{name}", k_max, k_min)
        centroids.append(calib.mean())
        evals[name] = _bucket_batch_means(*args, f"{evaluation_purpose}/{name}", k_max, k_min)
    centroids = np.array(centroids)
    counts = np.zeros((len(names), len(names)), dtype=int)
    for i, name in enumerate(names):
        assigned = np.argmin(np.abs(evals[name][:, None] - centroids[None, :]), axis=1)
        for j in assigned:
            counts[i, j] += 1
    return ConfusionMatrix(names, counts, centroids, evals)


@dataclass
class MomentReport:
    mean_error: np.ndarray
    cov_error: float
    avg_loglik: float


def moment_check(samples, reference):
    """Compare a sample set's first two moments and fit against a reference mixture."""
    xs = np.atleast_2d(as_points(samples, reference.dim))
    if len(xs) == 0:
        raise ValidationError("moment_check needs at least one sample")
    mean_err = np.abs(xs.mean(axis=0) - reference.mean())
    cov = np.atleast_2d(np.cov(xs, rowvar=False, ddof=0))
    cov_err = float(np.linalg.norm(cov - reference.covariance(), "fro"))
    ll = float(np.mean(analytic_log_density(reference, _CLEAN, xs, 0.0)))
    return MomentReport(mean_err, cov_err, ll)
