"""Slow, obviously-correct reference computations used by the tests."""

import itertools
import math

import numpy as np

from postdae.autodiff import Tensor


def hausdorff_bruteforce(a, b, cls):
    pa = [(r, c) for r in range(a.height) for c in range(a.width) if a.labels[r, c] == cls]
    pb = [(r, c) for r in range(b.height) for c in range(b.width) if b.labels[r, c] == cls]
    if not pa and not pb:
        return 0.0
    if not pa or not pb:
        return math.sqrt(a.height**2 + a.width**2)

    def directed(src, dst):
        worst = 0
        for p in src:
            best = min((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 for q in dst)
            worst = max(worst, best)
        return worst

    return math.sqrt(max(directed(pa, pb), directed(pb, pa)))


def signflip_pvalue(x, y):
    """Two-sided signed-rank p-value by enumerating all 2**n sign patterns."""
    d = [xi - yi for xi, yi in zip(x, y) if xi != yi]
    absd = [abs(v) for v in d]
    order = sorted(range(len(d)), key=lambda i: absd[i])
    ranks = [0.0] * len(d)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and absd[order[j + 1]] == absd[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    observed = sum(r for r, v in zip(ranks, d) if v > 0)
    lower = upper = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        t = sum(r for r, s in zip(ranks, signs) if s)
        lower += t <= observed + 1e-9
        upper += t >= observed - 1e-9
    return min(1.0, 2.0 * min(lower, upper) / 2 ** len(d))


def finite_difference(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to every entry of
    ``x.data`` (modified in place and restored)."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradient_error(op, shapes, seed, positive=False):
    """Worst relative error between reverse-mode gradients of
    sum(op(*inputs) * R) and central differences, over all inputs."""
    rng = np.random.default_rng(seed)
    inputs = []
    for s in shapes:
        data = rng.uniform(0.05, 1.0, s) if positive else rng.normal(size=s)
        inputs.append(Tensor(data, requires_grad=True))
    weights = None

    def value():
        nonlocal weights
        out = op(*inputs)
        if weights is None:
            weights = np.random.default_rng(seed + 1000).normal(size=out.shape)
        return float((out.data * weights).sum())

    value()
    out = op(*inputs)
    (out * Tensor(weights)).sum().backward()
    return max(relative_error(t.grad, finite_difference(value, t)) for t in inputs)


def meanfield_bruteforce(probs, intensities, theta_a, theta_b, theta_g, w_b, w_s, iterations):
    """Direct double loop over pixel pairs; probs (H, W, C)."""
    h, w, c = probs.shape
    pix = [(r, col) for r in range(h) for col in range(w)]
    unary = {p: [max(min(probs[p][l], 1.0), 1e-8) for l in range(c)] for p in pix}
    q = {}
    for p in pix:
        s = sum(unary[p])
        q[p] = [u / s for u in unary[p]]
    for _ in range(iterations):
        new = {}
        for p in pix:
            msg = [0.0] * c
            for o in pix:
                if o == p:
                    continue
                d2 = (p[0] - o[0]) ** 2 + (p[1] - o[1]) ** 2
                di2 = (intensities[p] - intensities[o]) ** 2
                k = w_b * math.exp(-d2 / (2 * theta_a**2) - di2 / (2 * theta_b**2)) + w_s * math.exp(
                    -d2 / (2 * theta_g**2)
                )
                for l in range(c):
                    msg[l] += k * q[o][l]
            energy = [sum(msg[m] for m in range(c) if m != l) for l in range(c)]
            z = [math.log(unary[p][l]) - energy[l] for l in range(c)]
            top = max(z)
            ex = [math.exp(v - top) for v in z]
            s = sum(ex)
            new[p] = [v / s for v in ex]
        q = new
    out = np.zeros((h, w, c))
    for p in pix:
        out[p] = q[p]
    return out
