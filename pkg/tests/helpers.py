"""Independent oracles shared by the test modules."""
import numpy as np


def central_difference(f, theta, eps=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for j in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += eps
        tm[j] -= eps
        g[j] = (f(tp) - f(tm)) / (2 * eps)
    return g


def max_relative_error(analytic, numeric, floor=1e-6):
    """Entrywise ``|a-n| / max(|a|, |n|, floor)``, maximized over entries.

    ``floor`` keeps entries that are zero up to round-off from dominating; with
    eps=1e-5 central differences carry ~1e-11 absolute noise, far below it.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def straight_line_net(W1, b1, W2, b2, x, act):
    """Explicit loops: hidden = act(W1 x + b1), logits = W2 hidden + b2, softmax."""
    hidden = []
    for i in range(len(b1)):
        s = b1[i]
        for j in range(len(x)):
            s += W1[i][j] * x[j]
        hidden.append(act(s))
    logits = []
    for i in range(len(b2)):
        s = b2[i]
        for j in range(len(hidden)):
            s += W2[i][j] * hidden[j]
        logits.append(s)
    m = max(logits)
    e = [np.exp(v - m) for v in logits]
    z = sum(e)
    return np.array([v / z for v in e])


def random_gradcheck_case(rng, kink_margin=1e-3):
    """Random (arch, params, x, target) away from relu kinks."""
    from pathway_cl.nn_core import NetArch, forward

    while True:
        depth = int(rng.integers(2, 5))
        widths = [int(w) for w in rng.integers(1, 6, size=depth)]
        head = str(rng.choice(["softmax_xent", "mse"]))
        if head == "softmax_xent":
            widths[-1] = max(widths[-1], 2)
        arch = NetArch(widths, str(rng.choice(["relu", "tanh", "identity"])), head)
        params = rng.normal(0, 0.8, size=arch.n_params)
        n = int(rng.integers(1, 4))
        x = rng.normal(size=(n, arch.n_in))
        if head == "softmax_xent":
            target = rng.integers(0, arch.n_out, size=n)
        else:
            target = rng.normal(size=(n, arch.n_out))
        _, cache = forward(arch, params, x)
        hidden = cache.preacts[:-1]
        if arch.activation == "relu" and any(np.min(np.abs(z)) < kink_margin for z in hidden):
            continue
        return arch, params, x, target


def gradcheck_error(arch, params, x, target, eps=1e-5):
    from pathway_cl.nn_core import backward, forward, loss

    _, cache = forward(arch, params, x)
    g = backward(arch, params, cache, target)
    num = central_difference(lambda th: loss(arch, forward(arch, th, x)[0], target), params, eps)
    return max_relative_error(g, num)


def logistic_store(w=(1.5, -0.5), b=(0.3, -0.2)):
    """Single-input two-class softmax model as a one-pathway store."""
    from pathway_cl.nn_core import NetArch
    from pathway_cl.pathway_net import PathwayLayout, build

    lay = PathwayLayout(None, (NetArch((1, 2), "identity", "softmax_xent"),))
    store = build(lay, 1, 0)
    store.theta = np.array([*w, *b], dtype=float)
    return store


def logistic_fisher_closed_form(store, x):
    """Fisher diagonal: E[x^2 p(1-p)] for both weights, E[p(1-p)] for both biases."""
    w, b = store.theta[:2], store.theta[2:]
    z = np.outer(x, w) + b
    p = np.exp(z[:, 0] - np.logaddexp(z[:, 0], z[:, 1]))
    pq = p * (1 - p)
    return np.array([np.mean(x**2 * pq)] * 2 + [np.mean(pq)] * 2)


ACCEPTANCE = []


def record_criterion(n, name, ok, detail):
    """Log one acceptance line (printed in the terminal summary) and fail if not ok."""
    ok = bool(ok)
    ACCEPTANCE.append((n, name, ok, detail))
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {n} {name}: {detail}")
    assert ok, f"criterion {n} ({name}) failed: {detail}"
