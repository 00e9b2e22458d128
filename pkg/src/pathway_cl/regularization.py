"""Quadratic forgetting penalties, Fisher estimation and the second-order forgetting predictor."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import snapshot
from .energy import EnergyLedger
from .errors import ConfigError, ContractError, ShapeError
from .pathway_net import ParamStore, pathway_backward, pathway_forward

FULL_FISHER_MAX_PARAMS = 500
_CHUNK = 4096


@dataclass
class TaskSnapshot:
    task: int
    theta: np.ndarray
    usage: np.ndarray  # per-parameter routing frequency during the task, in [0, 1]

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.usage = np.asarray(self.usage, dtype=float)
        if self.theta.shape != self.usage.shape:
            raise ShapeError("snapshot theta and usage lengths differ")
        if np.any(self.usage < 0):
            raise ContractError("usage weights must be nonnegative")

    def to_bytes(self) -> bytes:
        return snapshot.dumps("task_snapshot", {"task": self.task},
                              {"theta": self.theta, "usage": self.usage})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TaskSnapshot":
        _, meta, a = snapshot.loads(blob, "task_snapshot")
        return cls(meta["task"], a["theta"], a["usage"])


@dataclass
class FisherInfo:
    task: int
    kind: str  # "diagonal" or "full"
    values: np.ndarray
    n_samples: int

    def to_bytes(self) -> bytes:
        return snapshot.dumps("fisher", {"task": self.task, "kind": self.kind, "n_samples": self.n_samples},
                              {"values": self.values})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FisherInfo":
        _, meta, a = snapshot.loads(blob, "fisher")
        return cls(meta["task"], meta["kind"], a["values"], meta["n_samples"])


def usage_from_routing(store: ParamStore, chosen: np.ndarray) -> np.ndarray:
    """Per-parameter usage: fraction of routed inputs whose pathway contains the parameter."""
    chosen = np.asarray(chosen)
    usage = np.zeros(store.n_params)
    if chosen.size == 0:
        return usage
    freq = np.bincount(chosen, minlength=store.K) / chosen.size
    for k in range(store.K):
        if freq[k] > 0:
            usage[store.ps_idx[k]] += freq[k]
    usage[store.shared_idx] = freq.sum()
    return usage


def pathway_reg_loss(theta, snapshots) -> float:
    """``sum_i sum_j usage_i[j] * (theta[j] - theta_i[j])**2``."""
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    for s in snapshots:
        if s.theta.shape != theta.shape:
            raise ShapeError("snapshot length differs from theta")
        total += float(np.sum(s.usage * (theta - s.theta) ** 2))
    return total


def ewc_penalty(theta, snapshot_theta, fisher_diag, lam: float) -> float:
    """``(lam/2) * sum_j F_jj * (theta[j] - snapshot[j])**2``."""
    theta = np.asarray(theta, dtype=float)
    snapshot_theta = np.asarray(snapshot_theta, dtype=float)
    f = np.asarray(fisher_diag.values if isinstance(fisher_diag, FisherInfo) else fisher_diag, dtype=float)
    if not (theta.shape == snapshot_theta.shape == f.shape):
        raise ShapeError("theta, snapshot and Fisher diagonal lengths differ")
    if lam < 0:
        raise ConfigError("lambda must be nonnegative")
    if np.any(f < 0):
        raise ContractError("Fisher diagonal has negative entries")
    return 0.5 * lam * float(np.sum(f * (theta - snapshot_theta) ** 2))


def _score_rows(store, k, x, rng, ledger):
    """Per-sample ``d log p(y|x)/d theta`` with ``y`` drawn from the model."""
    head = store.layout.heads[k]
    if head.head != "softmax_xent":
        raise ConfigError("Fisher information needs a log-likelihood (softmax_xent) head")
    probs, cache = pathway_forward(store, k, x, ledger, phase="train")
    probs = np.atleast_2d(probs)
    # inverse-CDF draw of y ~ p(y|x)
    u = rng.random(probs.shape[0])
    y = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
    y = np.minimum(y, probs.shape[1] - 1)
    # gradient of the loss -log p is minus the score; squared/outer forms ignore the sign
    return pathway_backward(store, cache, y, per_sample=True, ledger=ledger, phase="train")


def _draw_inputs(data, n_samples, rng):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if n_samples <= data.shape[0]:
        idx = rng.permutation(data.shape[0])[:n_samples]
    else:
        idx = rng.integers(0, data.shape[0], size=n_samples)
    return data[idx]


def estimate_fisher_diag(store: ParamStore, k: int, data, n_samples: int, seed, task: int = 0,
                         ledger: Optional[EnergyLedger] = None) -> FisherInfo:
    """Monte-Carlo diagonal of the true Fisher of pathway ``k`` over inputs ``data``."""
    rng = np.random.default_rng(seed)
    x = _draw_inputs(data, n_samples, rng)
    acc = np.zeros(store.n_params)
    for start in range(0, n_samples, _CHUNK):
        g = _score_rows(store, k, x[start:start + _CHUNK], rng, ledger)
        acc += np.sum(g * g, axis=0)
    return FisherInfo(task, "diagonal", acc / n_samples, n_samples)


def estimate_fisher_full(store: ParamStore, k: int, data, n_samples: int, seed, task: int = 0,
                         ledger: Optional[EnergyLedger] = None) -> FisherInfo:
    if store.n_params > FULL_FISHER_MAX_PARAMS:
        raise ConfigError(f"full Fisher limited to {FULL_FISHER_MAX_PARAMS} parameters "
                          f"(store has {store.n_params})")
    rng = np.random.default_rng(seed)
    x = _draw_inputs(data, n_samples, rng)
    acc = np.zeros((store.n_params, store.n_params))
    for start in range(0, n_samples, _CHUNK):
        g = _score_rows(store, k, x[start:start + _CHUNK], rng, ledger)
        acc += g.T @ g
    F = acc / n_samples
    F = 0.5 * (F + F.T)
    return FisherInfo(task, "full", F, n_samples)


class EigEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def lambda_max(F, max_iters: int = 10000, tol: float = 1e-10, seed: int = 0) -> EigEstimate:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Stops when the residual ``||F v - lam v||`` drops below ``tol * max(1, lam)``.
    A run that hits ``max_iters`` is returned with ``converged=False``.
    """
    F = np.asarray(F.values if isinstance(F, FisherInfo) else F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ShapeError(f"expected a square matrix, got {F.shape}")
    n = F.shape[0]
    if n == 0:
        return EigEstimate(0.0, True, 0)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iters + 1):
        w = F @ v
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return EigEstimate(0.0, True, it)
        res = np.linalg.norm(w - lam * v)
        if res <= tol * max(1.0, abs(lam)):
            return EigEstimate(max(lam, 0.0), True, it)
        v = w / norm
    return EigEstimate(max(lam, 0.0), False, max_iters)


def predict_forgetting(delta_theta, fisher):
    """Second-order forgetting prediction ``(0.5 dT' F dT, 0.5 lam_max ||dT||^2)``.

    Accepts a diagonal (vector) or full (matrix) Fisher. The eigenvalue used in the
    bound is never below the Rayleigh quotient of ``delta_theta``, so the bound
    dominates the quadratic even when power iteration stops slightly short.
    """
    d = np.asarray(delta_theta, dtype=float)
    F = np.asarray(fisher.values if isinstance(fisher, FisherInfo) else fisher, dtype=float)
    sq = float(d @ d)
    if F.ndim == 1:
        if F.shape != d.shape:
            raise ShapeError("delta and Fisher diagonal lengths differ")
        quad = 0.5 * float(np.sum(F * d * d))
        lam = float(F.max()) if F.size else 0.0
    else:
        if F.shape != (d.size, d.size):
            raise ShapeError("delta and Fisher matrix shapes differ")
        quad = 0.5 * float(d @ F @ d)
        lam = lambda_max(F).value
        if sq > 0:
            lam = max(lam, 2.0 * quad / sq)
    return quad, 0.5 * lam * sq


def quadratic_prox(v, weights, anchors, step: float, mask=None):
    """Closed-form proximal step for ``sum_i w_i (theta - a_i)**2`` (elementwise).

    ``weights``/``anchors`` are stacked per snapshot (shape ``(S, P)``). Entries
    outside ``mask`` are returned unchanged. Unconditionally stable for any step.
    """
    v = np.asarray(v, dtype=float)
    if len(weights) == 0:
        return v
    W = np.sum(weights, axis=0)
    WA = np.sum(np.asarray(weights) * np.asarray(anchors), axis=0)
    out = (v + 2.0 * step * WA) / (1.0 + 2.0 * step * W)
    if mask is not None:
        out = np.where(mask, out, v)
    return out
