"""Synthetic task families with controllable similarity.

``rotated_gaussians``
    ``2C`` isotropic Gaussian clusters on a circle of radius ``radius`` inside a
    random 2-D plane of the input space; cluster ``m`` sits at angle
    ``angle + 180*m/C`` degrees and carries class ``m mod C``. For two classes this
    is an XOR layout, so a 90 degree rotation swaps the labels and the pattern has a
    180 degree period.
``permuted_features``
    The angle-0 rotated-Gaussian task with input coordinates permuted per task.
``linear_teacher``
    Standard-normal inputs labelled by ``argmax(W x)`` for a per-task teacher ``W``.

Every draw is a pure function of ``(spec, n, seed)``, and labels are balanced exactly
(class counts differ by at most one).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import nn_core
from .errors import ConfigError
from .nn_core import NetArch

KINDS = ("rotated_gaussians", "permuted_features", "linear_teacher")
ORDERINGS = ("fixed", "iid", "correlated")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    kind: str
    input_dim: int = 8
    n_classes: int = 2
    angle: float = 0.0  # degrees
    radius: float = 2.0
    noise: float = 0.5
    basis_seed: int = 0
    perm_seed: Optional[int] = None
    teacher_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.input_dim < 2 or self.n_classes < 2:
            raise ConfigError("need input_dim >= 2 and n_classes >= 2")
        if not (self.radius > 0 and self.noise > 0):
            raise ConfigError("radius and noise must be positive")


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple
    ordering: str = "fixed"
    seed: int = 0
    n_train: int = 2000
    n_eval: int = 500

    def __post_init__(self):
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("task ids in a stream must be unique")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def to_json(self) -> str:
        payload = {"ordering": self.ordering, "seed": self.seed, "n_train": self.n_train,
                   "n_eval": self.n_eval, "tasks": [asdict(t) for t in self.tasks]}
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TaskStream":
        d = json.loads(text)
        return cls(tuple(TaskSpec(**t) for t in d["tasks"]), d["ordering"], d["seed"],
                   d["n_train"], d["n_eval"])


def make_stream(kind: str, n_tasks: int, *, input_dim: int = 8, n_classes: int = 2,
                angle_step: Optional[float] = None, radius: float = 2.0, noise: float = 0.5,
                ordering: str = "fixed", seed: int = 0, n_train: int = 2000,
                n_eval: int = 500) -> TaskStream:
    """Build a reproducible stream of ``n_tasks`` tasks.

    ``angle_step`` defaults to ``180 / n_tasks`` degrees, spreading rotated tasks over
    one period. ``correlated`` ordering sorts by rotation angle; ``iid`` shuffles.
    """
    if n_tasks < 1:
        raise ConfigError("n_tasks must be >= 1")
    if ordering not in ORDERINGS:
        raise ConfigError(f"unknown ordering {ordering!r}")
    if n_train < 1 or n_eval < 1:
        raise ConfigError("n_train and n_eval must be >= 1")
    step = 180.0 / n_tasks if angle_step is None else float(angle_step)
    ss = np.random.SeedSequence([seed, 0x57EA])
    basis_seed = int(ss.generate_state(1)[0])
    derived = np.random.default_rng(ss).integers(0, 2**31 - 1, size=(n_tasks, 2))
    tasks = []
    for i in range(n_tasks):
        common = dict(task_id=i, kind=kind, input_dim=input_dim, n_classes=n_classes,
                      radius=radius, noise=noise, basis_seed=basis_seed)
        if kind == "rotated_gaussians":
            tasks.append(TaskSpec(angle=(i * step) % 360.0, **common))
        elif kind == "permuted_features":
            tasks.append(TaskSpec(perm_seed=None if i == 0 else int(derived[i, 0]), **common))
        elif kind == "linear_teacher":
            tasks.append(TaskSpec(teacher_seed=int(derived[i, 1]), **common))
        else:
            raise ConfigError(f"unknown task kind {kind!r}")
    if ordering == "iid":
        order = np.random.default_rng([seed, 0x11D]).permutation(n_tasks)
        tasks = [tasks[j] for j in order]
    elif ordering == "correlated":
        tasks.sort(key=lambda t: (t.angle, t.task_id))
    return TaskStream(tuple(tasks), ordering, seed, n_train, n_eval)


def plane_basis(spec: TaskSpec) -> np.ndarray:
    """Orthonormal ``(input_dim, 2)`` basis of the plane holding the clusters."""
    g = np.random.default_rng([spec.basis_seed, 0xBA515]).normal(size=(spec.input_dim, 2))
    q, _ = np.linalg.qr(g)
    return q


def cluster_centers(spec: TaskSpec, angle: Optional[float] = None):
    """``(centers, classes)`` of the rotated-Gaussian mixture in input space."""
    C = spec.n_classes
    theta = np.deg2rad((spec.angle if angle is None else angle) % 360.0)
    phis = theta + np.pi * np.arange(2 * C) / C
    planar = spec.radius * np.stack([np.cos(phis), np.sin(phis)], axis=1)
    return planar @ plane_basis(spec).T, np.arange(2 * C) % C


def class_means(spec: TaskSpec) -> np.ndarray:
    if spec.kind == "linear_teacher":
        raise ConfigError("class means of linear_teacher tasks have no closed form here")
    centers, classes = cluster_centers(spec)
    means = np.stack([centers[classes == c].mean(axis=0) for c in range(spec.n_classes)])
    return _permute(spec, means)


def teacher_weights(spec: TaskSpec) -> np.ndarray:
    return np.random.default_rng([spec.teacher_seed, 0x7EAC]).normal(size=(spec.n_classes, spec.input_dim))


def _permutation(spec):
    if spec.perm_seed is None:
        return np.arange(spec.input_dim)
    return np.random.default_rng([spec.perm_seed, 0x9E53]).permutation(spec.input_dim)


def _permute(spec, x):
    if spec.kind != "permuted_features":
        return x
    return x[..., _permutation(spec)]


def _quotas(n, C):
    counts = np.full(C, n // C)
    counts[: n % C] += 1
    return counts


def sample_components(spec: TaskSpec, n: int, seed):
    """Mixture draw returning ``(x, y, component)``; rotated/permuted kinds only."""
    rng = np.random.default_rng([seed, spec.task_id, _KIND_CODE[spec.kind], 0xD47A])
    C = spec.n_classes
    centers, _ = cluster_centers(spec)
    comp = []
    for c, cnt in enumerate(_quotas(n, C)):
        # class c owns clusters c and c + C; alternate between them
        comp.append(c + C * (np.arange(cnt) % 2))
    comp = rng.permutation(np.concatenate(comp))
    x = centers[comp] + spec.noise * rng.normal(size=(n, spec.input_dim))
    return _permute(spec, x), comp % C, comp


def sample_batch(spec: TaskSpec, n: int, seed):
    """Draw ``n`` labelled samples; returns float features ``(n, d)`` and int labels."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if spec.kind != "linear_teacher":
        x, y, _ = sample_components(spec, n, seed)
        return x, y
    rng = np.random.default_rng([seed, spec.task_id, _KIND_CODE[spec.kind], 0xD47A])
    W = teacher_weights(spec)
    need = _quotas(n, spec.n_classes)
    xs, ys = [], []
    got = np.zeros(spec.n_classes, dtype=int)
    while np.any(got < need):
        cand = rng.normal(size=(max(64, 2 * n), spec.input_dim))
        lab = teacher_labels(spec, cand, W)
        for c in range(spec.n_classes):
            take = cand[lab == c][: need[c] - got[c]]
            got[c] += len(take)
            xs.append(take)
            ys.append(np.full(len(take), c))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(n)
    return x[order], y[order]


def teacher_labels(spec: TaskSpec, x, W=None) -> np.ndarray:
    W = teacher_weights(spec) if W is None else W
    return np.argmax(np.asarray(x) @ W.T, axis=1)


def bayes_predict(spec: TaskSpec, x) -> np.ndarray:
    """Bayes-optimal labels under ``spec``, by brute force over mixture components."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if spec.kind == "linear_teacher":
        return teacher_labels(spec, x)
    centers, classes = cluster_centers(spec)
    centers = _permute(spec, centers)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    logw = -d2 / (2 * spec.noise ** 2)
    logw -= logw.max(axis=1, keepdims=True)
    like = np.exp(logw)
    scores = np.stack([like[:, classes == c].sum(axis=1) for c in range(spec.n_classes)], axis=1)
    return np.argmax(scores, axis=1)


def random_baseline_losses(spec: TaskSpec, arch: NetArch, n_inits: int, n_eval: int, seed,
                           data=None) -> np.ndarray:
    """Evaluation loss of ``n_inits`` freshly initialized networks.

    ``data`` overrides the evaluation sample (otherwise drawn with ``seed``).
    """
    if n_inits < 1:
        raise ConfigError("n_inits must be >= 1")
    x, y = data if data is not None else sample_batch(spec, n_eval, seed)
    out = np.empty(n_inits)
    for i in range(n_inits):
        params = nn_core.init_params(arch, np.random.SeedSequence([seed, 0x2A4D, i]))
        probs, _ = nn_core.forward(arch, params, x)
        out[i] = nn_core.loss(arch, probs, y)
    return out


def random_baseline_loss(spec: TaskSpec, arch: NetArch, n_inits: int = 16, n_eval: int = 500,
                         seed=0, data=None) -> float:
    return float(np.mean(random_baseline_losses(spec, arch, n_inits, n_eval, seed, data)))
