"""Standalone studies: forgetting-predictor fidelity and router convergence rate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn_core
from .errors import ConfigError
from .harness import RunConfig, run_method
from .nn_core import LrSchedule, per_sample_loss
from .pathway_net import pathway_forward
from .regularization import predict_forgetting
from .router import EvalSet, Router, routing_discrepancy


def pearson_r2(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 3 or a.shape != b.shape:
        raise ConfigError("need two equal-length samples of at least 3 points")
    if np.std(a) == 0 or np.std(b) == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1] ** 2)


# --------------------------------------------------------------------------- forgetting predictor


@dataclass
class FidelityResult:
    pairs: list  # (i, pos, epoch) labels; epoch == -1 marks end-of-task points
    predicted: np.ndarray  # 0.5 dT' F_i dT
    bound: np.ndarray  # 0.5 lam_max ||dT||^2
    measured: np.ndarray  # loss increase on task i
    r2: float


def _task_loss(run, i, theta=None):
    _, _, x, y = run.data[i]
    store = run.store
    if theta is not None:
        store = store.copy()
        store.theta = theta
    k = run.pathway_of(i)
    probs, _ = pathway_forward(store, k, x)
    return float(np.mean(per_sample_loss(run.layout.heads[k], probs, y)))


def forgetting_fidelity(config: RunConfig) -> FidelityResult:
    """Compare predicted and measured forgetting at every epoch boundary of an EWC run.

    Each earlier task i contributes one point per checkpoint, with the Fisher
    estimated at the end of task i.
    """
    if config.method != "ewc_mono":
        raise ConfigError("forgetting fidelity is measured on ewc_mono runs")
    pairs, pred, bound, meas = [], [], [], []
    snap_loss = {}

    def record(run, i, pos, epoch, theta, loss_now):
        if i not in snap_loss:
            snap_loss[i] = _task_loss(run, i, run.snapshots[i].theta)
        q, b = predict_forgetting(theta - run.snapshots[i].theta, run.fishers[i])
        pairs.append((i, pos, epoch))
        pred.append(q)
        bound.append(b)
        meas.append(loss_now - snap_loss[i])

    def hook(run, pos, epoch):
        for i in range(pos):
            record(run, i, pos, epoch, run.store.theta, _task_loss(run, i))

    rep = run_method(config, epoch_hook=hook)
    T = rep.n_tasks
    for t in range(1, T):
        for i in range(t):
            theta = rep.snapshots[t].theta
            q, b = predict_forgetting(theta - rep.snapshots[i].theta, rep.fishers[i])
            pairs.append((i, t, -1))
            pred.append(q)
            bound.append(b)
            meas.append(rep.loss_matrix[i][t] - rep.loss_matrix[i][i])
    pred, bound, meas = map(np.asarray, (pred, bound, meas))
    return FidelityResult(pairs, pred, bound, meas, pearson_r2(pred, meas) if len(pred) >= 3 else float("nan"))


# --------------------------------------------------------------------------- router convergence


def mirrored_routing_data(n: int, seed, d_h: int = 2):
    """Features whose pathway label is ``x1 > 0``, closed under reflections.

    Every draw appears with ``x2..`` negated and with the whole vector negated
    (label flipped), so the regularized optimum's boundary is exactly ``x1 = 0``.
    ``|x1|`` is Gamma(2)-distributed, so the density vanishes linearly at the
    boundary and routing disagreement scales like the squared parameter error.
    """
    if n < 1 or d_h < 1:
        raise ConfigError("n and d_h must be >= 1")
    rng = np.random.default_rng(seed)
    base = np.empty((n, d_h))
    base[:, 0] = rng.gamma(2.0, 1.0, n)
    base[:, 1:] = rng.normal(size=(n, d_h - 1))
    flip = base.copy()
    flip[:, 1:] *= -1
    pos = np.vstack([base, flip])
    h = np.vstack([pos, -pos])
    labels = np.concatenate([np.ones(2 * n, dtype=int), np.zeros(2 * n, dtype=int)])
    return h, labels


def _full_gradient(router: Router, h, tids, labels, mu):
    z, _ = router._inputs(h, tids)
    _, cache = nn_core.forward(router.arch, router.psi, z)
    delta = nn_core.output_delta(router.arch, cache, labels) / len(labels)
    grad, _ = nn_core.backprop(router.arch, router.psi, cache, delta)
    return grad + mu * router.psi


def reference_router(router: Router, h, tids, labels, mu: float, lr: float = 0.1,
                     tol: float = 1e-12, max_iters: int = 200000) -> Router:
    """Minimizer of mean cross-entropy + (mu/2)||psi||^2 by full-batch gradient descent."""
    ref = router.copy()
    for _ in range(max_iters):
        g = _full_gradient(ref, h, tids, labels, mu)
        if np.linalg.norm(g) < tol:
            return ref
        ref.psi = ref.psi - lr * g
    raise ConfigError(f"reference router did not converge in {max_iters} iterations")


@dataclass
class ConvergenceResult:
    steps: np.ndarray
    dist_sq: np.ndarray  # mean ||psi_t - psi*||^2 over seeds
    discrepancy: np.ndarray  # mean routing discrepancy to the reference router
    slope: float  # log-log slope of dist_sq against steps
    discrepancy_slope: float
    windows: np.ndarray  # discrepancy averaged over consecutive checkpoint windows

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.windows) <= 0))


def routing_convergence(n_seeds: int = 20, n_steps: int = 10000, n_checkpoints: int = 21,
                        first_checkpoint: int = 100, n_windows: int = 4, mu: float = 0.1,
                        eta0: float = 0.3, beta: float = 0.02, n_train: int = 1000,
                        n_eval: int = 50000, seed: int = 0) -> ConvergenceResult:
    """SGD on a linear router with weight decay and ``eta_t = eta0 / (1 + beta t)``.

    Embeddings are frozen, so the objective is strongly convex in ``psi`` and the
    expected squared distance to the optimum decays like ``1/t`` when
    ``mu * eta0 / beta > 1``.
    """
    if n_checkpoints < 2 or first_checkpoint >= n_steps:
        raise ConfigError("need at least two checkpoints inside the run")
    h, labels = mirrored_routing_data(n_train, [seed, 1])
    tids = np.zeros(len(labels), dtype=int)
    h_eval, _ = mirrored_routing_data(n_eval, [seed, 2])
    eval_set = EvalSet(h_eval, np.zeros(len(h_eval), dtype=int))
    proto = Router(2, 2, h.shape[1], hidden=0, seed=seed)
    proto.embed_task(0)
    ref = reference_router(proto, h, tids, labels, mu)
    ref_decisions = ref.route_batch(eval_set.h, eval_set.task_ids)[0]
    steps = np.unique(np.geomspace(first_checkpoint, n_steps, n_checkpoints).astype(int))
    sched = LrSchedule(eta0, "inverse_t", beta)
    dist = np.zeros(len(steps))
    disc = np.zeros(len(steps))
    for s in range(n_seeds):
        r = proto.copy()
        rng = np.random.default_rng([seed, 3, s])
        order = rng.integers(0, len(labels), size=n_steps)
        c = 0
        for t in range(1, n_steps + 1):
            j = order[t - 1:t]
            r.train_step(h[j], tids[j], labels[j], sched, t, weight_decay=mu, train_embeddings=False)
            if c < len(steps) and t == steps[c]:
                dist[c] += float(np.sum((r.psi - ref.psi) ** 2))
                disc[c] += routing_discrepancy(r, ref_decisions, eval_set)
                c += 1
    dist /= n_seeds
    disc /= n_seeds
    slope = float(np.polyfit(np.log(steps), np.log(dist), 1)[0])
    d_slope = float(np.polyfit(np.log(steps), np.log(np.maximum(disc, 1e-12)), 1)[0])
    windows = np.array([w.mean() for w in np.array_split(disc, n_windows)])
    return ConvergenceResult(steps, dist, disc, slope, d_slope, windows)
