"""Pathway-partitioned networks: a shared encoder plus one head per pathway.

The flat parameter vector is laid out as ``[encoder | head_0 | ... | head_{K-1}]``.
Pathway ``k`` (0-based) is the encoder block together with head block ``k``. With no
encoder the pathways are fully disjoint and the network input feeds each head.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn_core, snapshot
from .energy import EnergyLedger
from .errors import ConfigError, ShapeError
from .nn_core import NetArch


@dataclass(frozen=True)
class PathwayLayout:
    encoder: Optional[NetArch]
    heads: tuple

    def __post_init__(self):
        heads = tuple(self.heads)
        object.__setattr__(self, "heads", heads)
        if not heads:
            raise ConfigError("layout needs at least one head")
        n_in = {h.n_in for h in heads}
        if len(n_in) != 1:
            raise ConfigError(f"heads disagree on input width: {sorted(n_in)}")
        if self.encoder is not None:
            if self.encoder.n_out != heads[0].n_in:
                raise ConfigError(
                    f"encoder output width {self.encoder.n_out} != head input width {heads[0].n_in}")
            if any(h.activation != self.encoder.activation for h in heads):
                raise ConfigError("encoder and heads must share the activation")

    @property
    def input_dim(self) -> int:
        return self.encoder.n_in if self.encoder is not None else self.heads[0].n_in

    @property
    def feature_dim(self) -> int:
        """Width of ``h_shared`` (the network input when there is no encoder)."""
        return self.heads[0].n_in

    @property
    def K(self) -> int:
        return len(self.heads)

    def replicated(self, K: int) -> "PathwayLayout":
        if len(self.heads) == K:
            return self
        if len(self.heads) != 1:
            raise ConfigError(f"layout has {len(self.heads)} heads, cannot build K={K}")
        return PathwayLayout(self.encoder, (self.heads[0],) * K)

    def pathway_arch(self, k: int) -> NetArch:
        """Single-network architecture equivalent to encoder followed by head ``k``."""
        head = self.heads[k]
        if self.encoder is None:
            return head
        widths = self.encoder.layer_widths + head.layer_widths[1:]
        return NetArch(widths, head.activation, head.head)

    def pathway_flops(self, k: int) -> int:
        f = self.heads[k].flops_per_sample()
        if self.encoder is not None:
            f += self.encoder.flops_per_sample()
        return f

    def to_dict(self) -> dict:
        def arch(a):
            return None if a is None else {"layer_widths": list(a.layer_widths),
                                           "activation": a.activation, "head": a.head}
        return {"encoder": arch(self.encoder), "heads": [arch(h) for h in self.heads]}

    @classmethod
    def from_dict(cls, d: dict) -> "PathwayLayout":
        enc = None if d["encoder"] is None else NetArch(**d["encoder"])
        return cls(enc, tuple(NetArch(**h) for h in d["heads"]))


@dataclass
class ParamStore:
    theta: np.ndarray
    shared_idx: np.ndarray
    ps_idx: list
    layout: PathwayLayout

    @property
    def K(self) -> int:
        return len(self.ps_idx)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def copy(self) -> "ParamStore":
        return ParamStore(self.theta.copy(), self.shared_idx, self.ps_idx, self.layout)

    def encoder_params(self) -> np.ndarray:
        return self.theta[self.shared_idx]

    def head_params(self, k: int) -> np.ndarray:
        return self.theta[self.ps_idx[k]]

    def to_bytes(self) -> bytes:
        arrays = {"theta": self.theta, "shared_idx": self.shared_idx}
        for k, idx in enumerate(self.ps_idx):
            arrays[f"ps_idx_{k:04d}"] = idx
        return snapshot.dumps("param_store", {"layout": self.layout.to_dict(), "K": self.K}, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        _, meta, arrays = snapshot.loads(blob, "param_store")
        ps = [arrays[f"ps_idx_{k:04d}"] for k in range(meta["K"])]
        return cls(arrays["theta"], arrays["shared_idx"], ps, PathwayLayout.from_dict(meta["layout"]))


def build(layout: PathwayLayout, K: int, seed) -> ParamStore:
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    layout = layout.replicated(K)
    n_enc = layout.encoder.n_params if layout.encoder is not None else 0
    children = np.random.SeedSequence(seed).spawn(K + 1)
    parts = [nn_core.init_params(layout.encoder, children[0])] if n_enc else []
    ps_idx = []
    off = n_enc
    for k, head in enumerate(layout.heads):
        parts.append(nn_core.init_params(head, children[k + 1]))
        ps_idx.append(np.arange(off, off + head.n_params))
        off += head.n_params
    theta = np.concatenate(parts) if parts else np.zeros(0)
    return ParamStore(theta, np.arange(n_enc), ps_idx, layout)


def active_params(store: ParamStore, k: int) -> np.ndarray:
    if not 0 <= k < store.K:
        raise ConfigError(f"pathway index {k} out of range for K={store.K}")
    return np.concatenate([store.shared_idx, store.ps_idx[k]])


@dataclass
class PathwayCache:
    k: int
    enc_cache: Optional[nn_core.Cache]
    head_cache: nn_core.Cache
    h_shared: np.ndarray


def encode(store: ParamStore, x) -> np.ndarray:
    """Shared-encoder features ``h_shared`` for a batch (``x`` itself with no encoder)."""
    enc = store.layout.encoder
    if enc is None:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != store.layout.feature_dim:
            raise ShapeError(f"expected input width {store.layout.feature_dim}, got {x.shape}")
        return x
    h, _ = nn_core.forward(enc, store.encoder_params(), x, activate_last=True)
    return h


def pathway_forward(store: ParamStore, k: int, x, ledger: Optional[EnergyLedger] = None,
                    phase: str = "inference"):
    idx = active_params(store, k)
    layout = store.layout
    enc_cache = None
    if layout.encoder is not None:
        h, enc_cache = nn_core.forward(layout.encoder, store.encoder_params(), x, activate_last=True)
    else:
        h = np.asarray(x, dtype=float)
    out, head_cache = nn_core.forward(layout.heads[k], store.head_params(k), h)
    if ledger is not None:
        n = head_cache.output.shape[0]
        ledger.record(phase, flops=n * layout.pathway_flops(k), param_accesses=idx.size, samples=n)
    return out, PathwayCache(k, enc_cache, head_cache, np.atleast_2d(h))


def pathway_backward(store: ParamStore, cache: PathwayCache, target, *, per_sample: bool = False,
                     ledger: Optional[EnergyLedger] = None, phase: str = "train") -> np.ndarray:
    """Dense gradient over ``store.theta`` with exact zeros outside pathway ``cache.k``."""
    k = cache.k
    layout = store.layout
    head = layout.heads[k]
    delta = nn_core.output_delta(head, cache.head_cache, target)
    n = delta.shape[0]
    if not per_sample:
        delta = delta / n
    g_head, dh = nn_core.backprop(head, store.head_params(k), cache.head_cache, delta, per_sample=per_sample)
    shape = (n, store.n_params) if per_sample else (store.n_params,)
    grad = np.zeros(shape)
    grad[..., store.ps_idx[k]] = g_head
    if layout.encoder is not None:
        ec = cache.enc_cache
        enc = layout.encoder
        z = ec.preacts[-1]
        d_enc = dh * nn_core.activation_grad(enc.activation, z, ec.output)
        g_enc, _ = nn_core.backprop(enc, store.encoder_params(), ec, d_enc, per_sample=per_sample)
        grad[..., store.shared_idx] = g_enc
    if ledger is not None:
        ledger.record(phase, flops=2 * n * layout.pathway_flops(k),
                      param_accesses=active_params(store, k).size)
    return grad
