"""Finite-difference verification of the hand-written gradients."""
from __future__ import annotations

import numpy as np

from crodobo import losses as L
from crodobo.net import NetworkSpec, backward, forward, init_network

LOSSES = ("source", "exchange", "entropy", "diversity", "objective")
TINY_SPEC = NetworkSpec(input_dim=3, hidden_dims=[6, 5], num_classes=3)
DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
# below this magnitude an entry is compared in absolute terms
ABS_FLOOR = 1e-6
# instances with a pre-activation closer than this to the ReLU kink are redrawn
KINK_MARGIN = 1e-3


def relative_error(analytic, numeric, floor=ABS_FLOOR) -> float:
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def _min_relu_margin(net, x):
    _, cache = forward(net, x, "train", track_running_stats=False)
    margins = []
    for i in range(len(net.spec.hidden_dims)):
        y = net.params[f"bn{i}.gamma"] * cache.xhat[i] + net.params[f"bn{i}.beta"]
        margins.append(np.abs(y).min())
    return min(margins)


def _instance(spec, rng, loss, batch=8, tau=0.5):
    """Random inputs plus a closure mapping probabilities to (value, dlogits)."""
    x = rng.normal(size=(batch, spec.input_dim))
    c = spec.num_classes
    if loss == "source":
        y = rng.integers(0, c, size=batch)
        return x, lambda p: L.cross_entropy_terms(p, y)
    if loss == "exchange":
        logits = 3.0 * rng.normal(size=(batch, c))
        teacher = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        conf = teacher.max(axis=1)
        # keep both accepted and rejected rows in play
        conf_sorted = np.sort(conf)
        thr = 0.5 * (conf_sorted[batch // 2 - 1] + conf_sorted[batch // 2])
        return x, lambda p: L.exchange_terms(p, teacher, thr)[:2]
    if loss == "entropy":
        return x, L.entropy_terms
    if loss == "diversity":
        return x, L.diversity_terms
    if loss == "objective":
        # source rows, weak rows and strong rows in one batch, as in the engine
        b = batch // 2
        y = rng.integers(0, c, size=b)
        logits = 3.0 * rng.normal(size=(b, c))
        teacher = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        lam = 0.4
        x = rng.normal(size=(3 * b, spec.input_dim))
        s, w, t = slice(0, b), slice(b, 2 * b), slice(2 * b, 3 * b)

        def total(p):
            g = np.zeros_like(p)
            v1, g[s] = L.cross_entropy_terms(p[s], y)
            v2, g[t], _ = L.exchange_terms(p[t], teacher, tau)
            v3, ge = L.entropy_terms(p[w])
            v4, gd = L.diversity_terms(p[w])
            g[w] = ge + lam * gd
            return v1 + v2 + v3 + lam * v4, g
        return x, total
    raise ValueError(f"unknown loss {loss!r}; choose from {LOSSES}")


def grad_check(spec: NetworkSpec = TINY_SPEC, seed: int = 0, loss: str = "source",
               step: float = DEFAULT_STEP) -> float:
    """Max relative error between analytic and central-difference gradients
    of ``loss`` for every parameter of a freshly initialised network."""
    rng = np.random.default_rng(seed)
    net = init_network(spec, int(rng.integers(2**31)))
    # move BN scale/shift off their defaults so their gradients are exercised
    for i in range(len(spec.hidden_dims)):
        net.params[f"bn{i}.gamma"] += 0.3 * rng.normal(size=spec.hidden_dims[i])
        net.params[f"bn{i}.beta"] += 0.3 * rng.normal(size=spec.hidden_dims[i])
    while True:
        x, fn = _instance(spec, rng, loss)
        if _min_relu_margin(net, x) > KINK_MARGIN:
            break

    probs, cache = forward(net, x, "train", track_running_stats=False)
    _, dlogits = fn(probs)
    analytic = backward(net, cache, dlogits)

    def f():
        p, _ = forward(net, x, "train", track_running_stats=False)
        return fn(p)[0]

    worst = 0.0
    for name, w in net.params.items():
        num = np.zeros_like(w)
        flat = w.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = f()
            flat[j] = orig - step
            fm = f()
            flat[j] = orig
            num.reshape(-1)[j] = (fp - fm) / (2 * step)
        worst = max(worst, relative_error(analytic[name], num))
    return worst


def tolerance_for(step: float) -> float:
    """Pass threshold for a finite-difference step; loosened for steps above
    the default since truncation error grows with the step."""
    return DEFAULT_TOL * max(1.0, step / DEFAULT_STEP)


def run_all(instances: int = 20, step: float = DEFAULT_STEP, spec: NetworkSpec = TINY_SPEC):
    """Return ``{loss: max error over instances}``."""
    return {loss: max(grad_check(spec, seed, loss, step) for seed in range(instances))
            for loss in LOSSES}
