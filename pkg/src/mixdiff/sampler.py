"""Reverse-time sampling with run-time condition mixing.

A reverse chain runs ``N`` Euler-Maruyama steps at ``t = N/N, ..., 1/N``.
For a mixture the chain is split into three phases by two boundaries
``k_max >= k_min``:

* ``t > k_max``            BASE      score of the base condition only
* ``k_min < t <= k_max``   COMBINED  weighted sum of per-condition scores
* ``t <= k_min``           MIXIN     score of the mixed-in condition(s)

so the base condition lays down coarse structure and the mixed-in condition
overwrites detail late in the chain.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from ._validation import as_points
from .conditions import ConditionEmbedding
from .exceptions import SamplerDivergenceError, ShapeError, ValidationError

MAX_MIXIN_WEIGHT = 0.8
_WEIGHT_TOL = 1e-12
_BOUNDARY_TOL = 1e-12


class Phase(str, Enum):
    BASE = "BASE"
    COMBINED = "COMBINED"
    MIXIN = "MIXIN"


@dataclass(frozen=True)
class SamplerConfig:
    """Discretisation and RNG settings for one reverse chain.

    ``final_noise=False`` drops the noise term of the last step.
    ``t_floor`` is a lower clamp on the time passed to the score model.
    """

    steps: int = 10
    seed: int = 0
    t_floor: float = 1e-5
    final_noise: bool = False

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError(f"steps must be a positive integer, got {self.steps}")
        if not 0 <= self.t_floor < 1:
            raise ValidationError(f"t_floor must lie in [0, 1), got {self.t_floor}")

    def time_grid(self):
        """Descending step times ``N/N, (N-1)/N, ..., 1/N``."""
        n = self.steps
        return [i / n for i in range(n, 0, -1)]


@dataclass(frozen=True)
class MixSpec:
    """Weighted set of conditions plus the phase boundaries of the chain.

    Attributes:
        components: ``(embedding, weight)`` pairs; weights are nonnegative and
            sum to one.
        base: index of the base condition in ``components``.
        k_max, k_min: phase boundaries as fractions of the horizon.
        validate_cap: reject mixed-in weight above 0.8, which would let the
            mixed-in condition swamp the base one.
        combine_late: keep the weighted combination for ``t <= k_min`` too
            instead of switching to the mixed-in condition alone (ablation).
    """

    components: Sequence[Tuple[ConditionEmbedding, float]]
    base: int = 0
    k_max: float = 0.6
    k_min: float = 0.2
    validate_cap: bool = True
    combine_late: bool = False

    def __post_init__(self):
        comps = tuple((e, float(w)) for e, w in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValidationError("MixSpec needs at least one component")
        weights = np.array([w for _, w in comps])
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValidationError(f"MixSpec weights must be nonnegative, got {weights.tolist()}")
        if abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ValidationError(f"MixSpec weights must sum to 1, got {weights.sum():.15g}")
        if not 0 <= self.base < len(comps):
            raise ValidationError(f"MixSpec base index {self.base} out of range")
        if not 0.0 <= self.k_min <= self.k_max <= 1.0:
            raise ValidationError(
                f"MixSpec requires 0 <= k_min <= k_max <= 1, got k_min={self.k_min}, k_max={self.k_max}"
            )
        if self.validate_cap and self.mixin_weight > MAX_MIXIN_WEIGHT + _WEIGHT_TOL:
            raise ValidationError(
                f"MixSpec mixed-in weight {self.mixin_weight:g} exceeds {MAX_MIXIN_WEIGHT}"
            )
        dims = {e.dim for e, _ in comps}
        if len(dims) != 1:
            raise ShapeError(f"MixSpec embeddings disagree on dimension: {sorted(dims)}")

    @classmethod
    def dual(cls, base, mixin, gamma, **kwargs):
        """Two-condition mix with weight ``gamma`` on the mixed-in condition."""
        return cls(((base, 1.0 - gamma), (mixin, gamma)), base=0, **kwargs)

    @property
    def weights(self):
        return np.array([w for _, w in self.components])

    @property
    def mixin_weight(self):
        return float(sum(w for i, (_, w) in enumerate(self.components) if i != self.base))

    def describe(self):
        parts = [f"{e.label}:{w:g}" for e, w in self.components]
        return f"{'+'.join(parts)}@{self.k_max:g}/{self.k_min:g}"


def phase_of(t, k_max, k_min):
    if t > k_max + _BOUNDARY_TOL:
        return Phase.BASE
    if t > k_min + _BOUNDARY_TOL:
        return Phase.COMBINED
    return Phase.MIXIN


def phase_plan(steps, k_max, k_min):
    """List of ``(t, Phase)`` for each step of an ``steps``-step chain."""
    return [(t, phase_of(t, k_max, k_min)) for t in SamplerConfig(steps=steps).time_grid()]


def _model_dim(model):
    dim = getattr(model, "dim", None)
    if dim is None:
        raise ShapeError("score model does not expose its data dimension")
    return int(dim)


def reverse_step(x, t, score, sched, steps, z):
    """One discretised reverse-SDE step from ``t`` to ``t - 1/steps``."""
    x = as_points(x)
    score = np.asarray(score, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if score.shape != x.shape or z.shape != x.shape:
        raise ShapeError(f"x {x.shape}, score {score.shape} and z {z.shape} must match")
    h = sched.beta_at(t) / steps
    return x + h * (0.5 * x + score) + np.sqrt(h) * z


def combined_noise(model, x, t, mix):
    """Weighted sum of per-condition scores at the same ``(x, t)``.

    Zero-weight conditions are skipped, so a one-hot weighting reproduces the
    single-condition score exactly.
    """
    if not isinstance(mix, MixSpec):
        raise ValidationError("combined_noise expects a MixSpec")
    return _weighted_score(model, x, t, mix.components)


def _weighted_score(model, x, t, components):
    total = None
    for e, w in components:
        if w == 0.0:
            continue
        term = w * model.evaluate(x, t, e)
        total = term if total is None else total + term
    if total is None:
        raise ValidationError("all mixing weights are zero")
    return total


def _late_components(mix):
    # mixed-in conditions renormalised among themselves; falls back to the base
    # condition when nothing is mixed in (gamma = 0)
    rest = [(e, w) for i, (e, w) in enumerate(mix.components) if i != mix.base and w > 0]
    total = sum(w for _, w in rest)
    if total == 0:
        return [(mix.components[mix.base][0], 1.0)]
    return [(e, w / total) for e, w in rest]


def _run_chain(score_fn, sched, dim, cfg, size):
    rng = np.random.default_rng(cfg.seed)
    shape = (dim,) if size is None else (size, dim)
    x = rng.standard_normal(shape)
    grid = cfg.time_grid()
    for i, t in enumerate(grid):
        score = score_fn(x, max(t, cfg.t_floor), t)
        last = i == len(grid) - 1
        z = np.zeros(shape) if (last and not cfg.final_noise) else rng.standard_normal(shape)
        x = reverse_step(x, t, score, sched, cfg.steps, z)
        if not np.all(np.isfinite(x)):
            raise SamplerDivergenceError(i)
    return x


def sample(model, sched, e, cfg, size=None):
    """Generate from ``N(0, I)`` noise conditioned on a single embedding.

    Returns a ``(d,)`` point, or a ``(size, d)`` batch when ``size`` is given.
    """
    return _run_chain(lambda x, t, _: model.evaluate(x, t, e), sched, _model_dim(model), cfg, size)


def sample_mixed(model, sched, mix, cfg, size=None):
    """Generate with the three-phase condition schedule of ``mix``."""
    base = [(mix.components[mix.base][0], 1.0)]
    late = mix.components if mix.combine_late else _late_components(mix)
    sources = {Phase.BASE: base, Phase.COMBINED: mix.components, Phase.MIXIN: late}

    def score_fn(x, t_eval, t):
        return _weighted_score(model, x, t_eval, sources[phase_of(t, mix.k_max, mix.k_min)])

    return _run_chain(score_fn, sched, _model_dim(model), cfg, size)


def intensity_sample(model, sched, neutral, target, gamma, cfg, size=None,
                     k_max=0.6, k_min=0.2, validate_cap=True):
    """Interpolate between Neutral and ``target`` with weight ``gamma`` on the target."""
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must lie in [0, 1], got {gamma}")
    mix = MixSpec.dual(neutral, target, gamma, k_max=k_max, k_min=k_min,
                       validate_cap=validate_cap)
    return sample_mixed(model, sched, mix, cfg, size)
