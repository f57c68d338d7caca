"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

ACCEPTANCE_LINES = []


def record(criterion, passed, detail, seconds):
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail} ({seconds:.2f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


def central_diff_grad(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        g.flat[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def weighted_log_density_gradient(dists, weights, sched, x, t, h=1e-30):
    """Complex-step derivative of ``sum_i w_i log p_t(x | e_i)``.

    The time-t mixture densities are rebuilt here from the linear rate, with
    no use of the library's marginal or score code.
    """
    x = np.asarray(x, dtype=np.float64)
    B = sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t
    a2 = np.exp(-B)
    grad = np.zeros_like(x)
    for j in range(len(x)):
        xc = x.astype(complex)
        xc[j] += 1j * h
        total = 0.0
        for dist, w in zip(dists, weights):
            terms = [np.log(cw) - 0.5 * np.sum((xc - np.sqrt(a2) * m) ** 2) / (a2 * v + 1 - a2)
                     - 0.5 * len(x) * np.log(2 * np.pi * (a2 * v + 1 - a2))
                     for cw, m, v in zip(dist.weights, dist.means, dist.variances)]
            total = total + w * np.log(np.sum(np.exp(terms)))
        grad[j] = total.imag / h
    return grad
