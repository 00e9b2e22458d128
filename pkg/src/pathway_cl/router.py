"""Meta-network routing over pathways.

A router concatenates shared features ``h`` with a learned task embedding ``tau`` and
scores the K pathways with a small MLP ``g_psi``; the chosen pathway is the argmax
of the scores, lowest index on ties.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import nn_core, snapshot
from .energy import EnergyLedger
from .errors import ConfigError, NumericError, ShapeError
from .nn_core import LrSchedule, NetArch


class RoutingRecord(NamedTuple):
    input_id: int
    task_id: int
    k: int
    alpha: tuple


def argmax_lowest(alpha: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(np.atleast_2d(alpha), axis=1)


class Router:
    """Task-embedding table plus meta-network weights ``psi``.

    ``hidden=0`` gives a linear scorer, which is convex in ``psi`` under
    cross-entropy and is what the convergence study uses.
    """

    def __init__(self, K: int, d: int, d_h: int, hidden: int = 16, seed: int = 0,
                 activation: str = "tanh", embed_scale: float = 1.0):
        if K < 1 or d < 1 or d_h < 1:
            raise ConfigError(f"K, d and d_h must be positive (got K={K}, d={d}, d_h={d_h})")
        if hidden < 0:
            raise ConfigError("hidden width must be >= 0")
        self.K, self.d, self.d_h, self.hidden = K, d, d_h, hidden
        self.seed = seed
        self.embed_scale = embed_scale
        widths = [d_h + d, hidden, K] if hidden else [d_h + d, K]
        self.arch = NetArch(widths, activation, "softmax_xent")
        self.psi = nn_core.init_params(self.arch, np.random.SeedSequence([seed, 0x5EED]))
        self.embed: dict = {}

    def embed_task(self, task_id: int) -> np.ndarray:
        """Embedding row for ``task_id``; unseen ids get a fresh row seeded by (seed, id)."""
        task_id = int(task_id)
        if task_id not in self.embed:
            rng = np.random.default_rng([self.seed, 0xE3BED, task_id])
            self.embed[task_id] = rng.normal(0.0, self.embed_scale, self.d)
        return self.embed[task_id]

    def _inputs(self, h, task_ids):
        h = np.atleast_2d(np.asarray(h, dtype=float))
        if h.shape[1] != self.d_h:
            raise ShapeError(f"expected features of width {self.d_h}, got {h.shape}")
        task_ids = np.broadcast_to(np.asarray(task_ids), (h.shape[0],))
        uniq, inv = np.unique(task_ids, return_inverse=True)
        tau = np.stack([self.embed_task(t) for t in uniq])[inv.reshape(-1)]
        return np.hstack([h, tau]), task_ids

    def _book(self, ledger, n, training=False):
        if ledger is None:
            return
        flops = n * self.arch.flops_per_sample()
        if training:
            ledger.record("routing", flops=3 * flops, param_accesses=2 * self.arch.n_params, samples=n)
        else:
            ledger.record("routing", flops=flops, param_accesses=self.arch.n_params,
                          messages=n, samples=n)

    def scores(self, h, tau) -> np.ndarray:
        """Raw scores ``alpha = g_psi([h, tau])`` for explicit feature/embedding rows."""
        z = np.hstack([np.atleast_2d(h), np.atleast_2d(tau)])
        if z.shape[1] != self.d_h + self.d:
            raise ShapeError(f"expected {self.d_h}+{self.d} inputs, got {z.shape[1]}")
        _, cache = nn_core.forward(self.arch, self.psi, z)
        return cache.logits

    def route(self, h, tau, ledger: Optional[EnergyLedger] = None):
        """Route one feature vector with an explicit embedding; returns ``(k, alpha)``."""
        h = np.asarray(h, dtype=float)
        tau = np.asarray(tau, dtype=float)
        if h.shape != (self.d_h,) or tau.shape != (self.d,):
            raise ShapeError(f"expected h of shape ({self.d_h},) and tau of shape ({self.d},)")
        alpha = self.scores(h, tau)[0]
        self._book(ledger, 1)
        return int(argmax_lowest(alpha)[0]), alpha

    def route_batch(self, h, task_ids, ledger: Optional[EnergyLedger] = None):
        """Route a batch; ``task_ids`` may be a scalar. Returns ``(ks, alphas)``."""
        z, _ = self._inputs(h, task_ids)
        _, cache = nn_core.forward(self.arch, self.psi, z)
        self._book(ledger, z.shape[0])
        return argmax_lowest(cache.logits), cache.logits

    def train_step(self, h, task_ids, targets, schedule: LrSchedule, t: int, *,
                   weight_decay: float = 0.0, train_embeddings: bool = True,
                   ledger: Optional[EnergyLedger] = None) -> float:
        """One SGD step on cross-entropy of ``softmax(alpha)`` against target pathways.

        Returns the batch loss measured before the update.
        """
        z, task_ids = self._inputs(h, task_ids)
        targets = np.asarray(targets)
        if targets.min() < 0 or targets.max() >= self.K:
            raise ConfigError(f"target pathways must lie in 0..{self.K - 1}")
        probs, cache = nn_core.forward(self.arch, self.psi, z)
        batch_loss = nn_core.loss(self.arch, probs, targets)
        if not np.isfinite(batch_loss):
            raise NumericError("non-finite router loss")
        n = z.shape[0]
        delta = nn_core.output_delta(self.arch, cache, targets) / n
        grad, dz = nn_core.backprop(self.arch, self.psi, cache, delta)
        if weight_decay:
            grad = grad + weight_decay * self.psi
        self.psi = nn_core.sgd_step(self.psi, grad, schedule, t)
        if train_embeddings:
            d_tau = dz[:, self.d_h:]
            rate = schedule.rate(t)
            for tid in np.unique(task_ids):
                g = d_tau[task_ids == tid].sum(axis=0)
                self.embed[int(tid)] = self.embed[int(tid)] - rate * g
        self._book(ledger, n, training=True)
        return batch_loss

    def copy(self) -> "Router":
        r = Router.__new__(Router)
        r.__dict__.update(self.__dict__)
        r.psi = self.psi.copy()
        r.embed = {k: v.copy() for k, v in self.embed.items()}
        return r

    def to_bytes(self) -> bytes:
        ids = sorted(self.embed)
        table = np.array([self.embed[i] for i in ids]).reshape(len(ids), self.d)
        meta = {"K": self.K, "d": self.d, "d_h": self.d_h, "hidden": self.hidden,
                "seed": self.seed, "activation": self.arch.activation,
                "embed_scale": self.embed_scale}
        return snapshot.dumps("router", meta, {"psi": self.psi, "embed_ids": np.array(ids, dtype=np.int64),
                                               "embed": table})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Router":
        _, meta, arrays = snapshot.loads(blob, "router")
        r = cls(meta["K"], meta["d"], meta["d_h"], meta["hidden"], meta["seed"],
                meta["activation"], meta["embed_scale"])
        r.psi = arrays["psi"]
        r.embed = {int(i): row.copy() for i, row in zip(arrays["embed_ids"], arrays["embed"])}
        return r


@dataclass
class EvalSet:
    """Points to route: feature rows and the task each row belongs to."""

    h: np.ndarray
    task_ids: np.ndarray
    labels: Optional[np.ndarray] = None  # target pathway per row, when known


def _decisions(router, eval_set):
    if isinstance(router, Router):
        return router.route_batch(eval_set.h, eval_set.task_ids)[0]
    return np.asarray(router)  # precomputed decisions


def routing_discrepancy(router_a, router_b, eval_set: EvalSet) -> float:
    """Mean of ``||e_{R_a} - e_{R_b}||^2`` over ``eval_set``; equals 2 x disagreement rate.

    Either router may be given as an array of precomputed decisions.
    """
    if len(eval_set.task_ids) == 0:
        raise ConfigError("empty evaluation set")
    if isinstance(router_a, Router) and isinstance(router_b, Router) and router_a.K != router_b.K:
        raise ConfigError("routers disagree on K")
    ka = _decisions(router_a, eval_set)
    kb = _decisions(router_b, eval_set)
    return 2.0 * float(np.mean(ka != kb))


def routing_accuracy(router, eval_set: EvalSet) -> float:
    if len(eval_set.task_ids) == 0:
        raise ConfigError("empty evaluation set")
    if eval_set.labels is None:
        raise ConfigError("routing accuracy needs labelled pathways")
    return float(np.mean(_decisions(router, eval_set) == np.asarray(eval_set.labels)))
