"""Independent reference implementations, written as plain loops."""

import math


def naive_mre(datasets, predictions):
    """datasets: list of (d, w) lists; predictions: list of lists."""
    total, n_active = 0.0, 0
    for (d, w), p in zip(datasets, predictions):
        w_i = sum(w)
        if w_i <= 0:
            continue
        n_active += 1
        d_mean = sum(d) / len(d)
        acc = 0.0
        for j in range(len(d)):
            acc += (w[j] / w_i) * abs(p[j] - d[j]) / abs(d_mean)
        total += acc
    return total / n_active


def naive_smse(datasets, predictions):
    total, n_active = 0.0, 0
    for (d, w), p in zip(datasets, predictions):
        w_i = sum(w)
        if w_i <= 0:
            continue
        n_active += 1
        d_mean = sum(d) / len(d)
        p_mean = sum(p) / len(p)
        acc = 0.0
        for j in range(len(d)):
            acc += (w[j] / w_i) * (p[j] - d[j]) ** 2 / (p_mean**2 + d_mean**2)
        total += acc
    return total / n_active


def naive_kde(points, at, h):
    """Product Gaussian kernel density, one term at a time."""
    out = []
    for q in at:
        acc = 0.0
        for z in points:
            term = 1.0
            for k in range(len(h)):
                u = (q[k] - z[k]) / h[k]
                term *= math.exp(-0.5 * u * u) / (math.sqrt(2.0 * math.pi) * h[k])
            acc += term
        out.append(acc / len(points))
    return out


def rosenbrock(x):
    return (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2
