"""Property battery behind ``mixdiff check``.

Each check compares a library routine against an independent route to the
same quantity (closed form, quadrature, finite or complex-step differences,
bit-exact replay) and reports the measured discrepancy next to its tolerance.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .conditions import AnalyticScoreModel, analytic_log_density, analytic_score
from .network import MlpScoreNetwork
from .probe import posterior
from .sampler import MixSpec, SamplerConfig, combined_noise, intensity_sample, phase_plan, \
    sample, sample_mixed
from .training import FeatureExtractor, gram_matrix, style_loss


@dataclass
class CheckResult:
    name: str
    tolerance: float
    measured: float
    passed: bool


def _result(name, tol, measured, strict=False):
    ok = bool(np.isfinite(measured) and (measured < tol if strict else measured <= tol))
    return CheckResult(name, tol, float(measured), ok)


def complex_step_log_density_grad(dist, sched, x, t, h=1e-30):
    """Gradient of the marginal log density by complex-step differentiation.

    Written independently of :func:`analytic_score`: the log density is
    re-derived here in complex arithmetic and differentiated per coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.exp(-0.5 * sched.beta_integral(t))
    lam = 1.0 - a * a
    d = x.shape[-1]
    grad = np.empty_like(x)
    for j in range(d):
        xc = x.astype(np.complex128)
        xc[..., j] += 1j * h
        terms = []
        for w, m, v in zip(dist.weights, dist.means, dist.variances):
            s = a * a * v + lam
            r2 = np.sum((xc - a * m) ** 2, axis=-1)
            terms.append(np.log(w) - 0.5 * r2 / s - 0.5 * d * np.log(2 * np.pi * s))
        terms = np.stack(terms, axis=-1)
        shift = np.max(terms.real, axis=-1, keepdims=True)
        logp = np.log(np.sum(np.exp(terms - shift), axis=-1)) + shift[..., 0]
        grad[..., j] = logp.imag / h
    return grad


def _relerr(a, b, floor=1e-8):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def check_schedule(sched):
    grid = np.linspace(0.0, 1.0, 100)
    ident = np.max(np.abs(sched.alpha(grid) ** 2 + sched.lambda_var(grid) - 1.0))
    quad_err = max(
        abs(sched.beta_integral(t) - integrate.quad(sched.beta_at, 0.0, t, epsabs=1e-12, epsrel=1e-12)[0])
        for t in grid
    )
    lam = sched.lambda_var(grid)
    alp = sched.alpha(grid)
    mono = float(max(np.max(-np.diff(lam)), np.max(np.diff(alp)), 0.0))
    return [
        _result("schedule.alpha2_plus_lambda", 1e-12, ident),
        _result("schedule.integral_vs_quadrature", 1e-10, quad_err),
        _result("schedule.monotone", 0.0, mono),
    ]


def check_score_oracle(dists, sched, rng, n=100, h=1e-5):
    worst = 0.0
    for i in range(n):
        dist = dists[i % len(dists)]
        t = rng.uniform(0.01, 1.0)
        x = rng.uniform(-4, 4, size=dist.dim)
        fd = np.empty(dist.dim)
        for j in range(dist.dim):
            e = np.zeros(dist.dim)
            e[j] = h
            fd[j] = (analytic_log_density(dist, sched, x + e, t)
                     - analytic_log_density(dist, sched, x - e, t)) / (2 * h)
        worst = max(worst, _relerr(analytic_score(dist, sched, x, t), fd))
    return [_result("score.fd_relative_error", 1e-6, worst, strict=True)]


def check_composition(dists, sched, rng, n=1000):
    """Weighted score sum against the complex-step gradient of weighted log densities."""
    model = AnalyticScoreModel(dists, sched)
    worst = 0.0
    for i in range(n):
        a, b = rng.choice(len(dists), size=2, replace=False)
        g = rng.uniform(0.0, 1.0)
        mix = MixSpec(((dists[a].condition, 1.0 - g), (dists[b].condition, g)), validate_cap=False)
        x = rng.uniform(-4, 4, size=dists[a].dim)
        t = rng.uniform(0.01, 1.0)
        oracle = (1.0 - g) * complex_step_log_density_grad(dists[a], sched, x, t) \
            + g * complex_step_log_density_grad(dists[b], sched, x, t)
        worst = max(worst, float(np.max(np.abs(combined_noise(model, x, t, mix) - oracle))))
    return [_result("sampler.weighted_score_identity", 1e-9, worst, strict=True)]


def check_network_gradient(rng, h=1e-5):
    net = MlpScoreNetwork(hidden_sizes=(5, 4), n_frequencies=1, random_state=int(rng.integers(2**31)))
    net.initialize(2, 3)
    x = rng.normal(size=(6, 2))
    t = rng.uniform(0.05, 1.0, size=6)
    e = rng.normal(size=3)
    target = rng.normal(size=(6, 2))

    def loss(flat):
        net.set_flat_params(flat)
        out = net.evaluate(x, t, e)
        return 0.5 * np.sum((out - target) ** 2)

    p0 = net.get_flat_params()
    out, cache = net.forward(x, t, e)
    cg, ig = net.backward(cache, out - target)
    analytic = np.concatenate([a.ravel() for pair in zip(cg, ig) for a in pair])
    worst = 0.0
    for k in range(len(p0)):
        dp = np.zeros_like(p0)
        dp[k] = h
        fd = (loss(p0 + dp) - loss(p0 - dp)) / (2 * h)
        worst = max(worst, abs(fd - analytic[k]) / max(abs(fd), abs(analytic[k]), 1e-8))
    net.set_flat_params(p0)
    return [_result("network.fd_gradient_relative_error", 1e-4, worst, strict=True)]


def check_degeneracy(dists, sched, seed):
    model = AnalyticScoreModel(dists, sched)
    e1, e2 = dists[0].condition, dists[-1].condition
    cfg = SamplerConfig(steps=10, seed=seed)
    ref = sample(model, sched, e1, cfg, size=64)
    mixed = sample_mixed(model, sched, MixSpec(((e1, 1.0), (e2, 0.0)), k_max=1.0, k_min=0.0),
                         cfg, size=64)
    zero_gamma = intensity_sample(model, sched, e1, e2, 0.0, cfg, size=64)
    return [
        _result("sampler.one_hot_mix_bit_identical", 0.0, float(np.any(mixed != ref))),
        _result("sampler.zero_intensity_bit_identical", 0.0, float(np.any(zero_gamma != ref))),
    ]


def check_phase_plan():
    bad = 0
    for n in range(1, 41):
        for k_max in np.linspace(0, 1, 11):
            for k_min in np.linspace(0, k_max, 6):
                modes = [p.value for _, p in phase_plan(n, k_max, k_min)]
                order = {"BASE": 0, "COMBINED": 1, "MIXIN": 2}
                ranks = [order[m] for m in modes]
                if len(modes) != n or ranks != sorted(ranks):
                    bad += 1
    counts = [p.value for _, p in phase_plan(10, 0.6, 0.2)]
    split = (counts.count("BASE"), counts.count("COMBINED"), counts.count("MIXIN"))
    bad += split != (4, 4, 2)
    return [_result("sampler.phase_partition_violations", 0.0, float(bad))]


def check_style(rng):
    ext = FeatureExtractor.random(3, seed=int(rng.integers(2**31)))
    worst_sym, worst_psd, self_loss = 0.0, 0.0, 0.0
    for _ in range(100):
        f = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 9))))
        g = gram_matrix(f)
        worst_sym = max(worst_sym, float(np.max(np.abs(g - g.T))))
        worst_psd = max(worst_psd, float(-min(np.linalg.eigvalsh(g).min(), 0.0)))
        m = rng.normal(size=(7, 3))
        self_loss = max(self_loss, style_loss(ext, m, m))
    one = style_loss(FeatureExtractor([np.eye(1)], activation="identity"), [[2.0]], [[1.0]])
    return [
        _result("style.self_loss", 0.0, self_loss),
        _result("style.gram_symmetry", 0.0, worst_sym),
        _result("style.gram_psd_negative_eigenvalue", 1e-12, worst_psd),
        _result("style.one_by_one_example", 0.0, abs(one - 9.0)),
    ]


def check_posterior(dists, rng):
    x = rng.uniform(-4, 4, size=(500, dists[0].dim))
    priors = np.full(len(dists), 1.0 / len(dists))
    p = posterior(dists, priors, x)
    perm = rng.permutation(len(dists))
    q = posterior([dists[i] for i in perm], priors[perm], x)
    return [
        _result("probe.normalisation", 1e-9, float(np.max(np.abs(p.sum(axis=-1) - 1.0)))),
        _result("probe.permutation_equivariance", 1e-12, float(np.max(np.abs(p[:, perm] - q)))),
    ]


def run_all(dists, sched, seed=0):
    rng = np.random.default_rng(seed)
    results = []
    results += check_schedule(sched)
    results += check_score_oracle(dists, sched, rng)
    if len(dists) >= 2:
        results += check_composition(dists, sched, rng)
        results += check_degeneracy(dists, sched, seed)
    results += check_network_gradient(rng)
    results += check_phase_plan()
    results += check_style(rng)
    results += check_posterior(dists, rng)
    return results
