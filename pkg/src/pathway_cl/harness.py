"""Continual-learning runs, K sweeps, method comparisons and report emission."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics as M
from .energy import PHASES, CostModel, EnergyLedger, check_budget, total_energy
from .errors import ConfigError, DegenerateNormalizationError, NumericError
from .nn_core import LrSchedule, NetArch, per_sample_loss, sgd_step
from .pathway_net import PathwayLayout, active_params, build, encode, pathway_backward, pathway_forward
from .regularization import TaskSnapshot, estimate_fisher_diag, quadratic_prox, usage_from_routing
from .router import Router
from .tasks import make_stream, random_baseline_loss, sample_batch

log = logging.getLogger(__name__)

METHODS = ("naive", "ewc_mono", "agem_lite", "papi", "papi_oracle_routing")
PAPI_METHODS = ("papi", "papi_oracle_routing")


class RunAborted(NumericError):
    pass


# --------------------------------------------------------------------------- config


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return data


@dataclass(frozen=True)
class StreamConfig:
    kind: str = "rotated_gaussians"
    n_tasks: int = 3
    input_dim: int = 8
    n_classes: int = 2
    n_train: int = 2000
    n_eval: int = 500
    angle_step: Optional[float] = None
    radius: float = 2.0
    noise: float = 0.5
    ordering: str = "fixed"

    def build(self, seed: int):
        return make_stream(self.kind, self.n_tasks, input_dim=self.input_dim, n_classes=self.n_classes,
                           angle_step=self.angle_step, radius=self.radius, noise=self.noise,
                           ordering=self.ordering, seed=seed, n_train=self.n_train, n_eval=self.n_eval)


@dataclass(frozen=True)
class LayoutConfig:
    """Network shape. ``head_hidden`` is the K=1 head; K heads share that parameter budget."""

    encoder_widths: tuple = ()
    head_hidden: tuple = (128,)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "head_hidden", tuple(int(w) for w in self.head_hidden))

    def head_widths(self, d_h: int, n_classes: int, K: int) -> tuple:
        """Per-pathway hidden widths: the largest whose K copies fit the K=1 head's parameter count."""
        def n_params(hidden):
            return NetArch((d_h,) + tuple(hidden) + (n_classes,), self.activation).n_params

        budget = n_params(self.head_hidden)
        hidden = [max(1, h // K) for h in self.head_hidden]
        while K * n_params(hidden) > budget:
            j = int(np.argmax(hidden))
            if hidden[j] == 1:
                raise ConfigError(f"K={K} pathways cannot fit the parameter budget of {budget}")
            hidden[j] -= 1
        return tuple(hidden)

    def build(self, input_dim: int, n_classes: int, K: int) -> PathwayLayout:
        encoder = None
        d_h = input_dim
        if self.encoder_widths:
            encoder = NetArch((input_dim,) + self.encoder_widths, self.activation)
            d_h = self.encoder_widths[-1]
        hidden = self.head_widths(d_h, n_classes, K)
        head = NetArch((d_h,) + hidden + (n_classes,), self.activation, "softmax_xent")
        return PathwayLayout(encoder, (head,) * K)


@dataclass(frozen=True)
class RunConfig:
    method: str
    seed: int
    stream: StreamConfig = StreamConfig()
    layout: LayoutConfig = LayoutConfig()
    K: int = 3
    epochs: int = 3
    batch_size: int = 32
    schedule: LrSchedule = LrSchedule(0.1)
    ewc_lambda: float = 1000.0
    fisher_samples: int = 500
    papi_ewc: bool = False
    agem_memory: int = 64
    router_embed_dim: int = 8
    router_hidden: int = 16
    router_samples: int = 1000
    router_epochs: int = 3
    router_lr: float = 0.1
    n_random_inits: int = 16
    cost_model: CostModel = CostModel()
    energy_budget: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method in PAPI_METHODS and self.K < 1:
            raise ConfigError("papi methods need K >= 1")
        if self.method == "agem_lite" and self.agem_memory < 1:
            raise ConfigError("agem_lite needs agem_memory >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.fisher_samples < 1:
            raise ConfigError("epochs, batch_size and fisher_samples must be >= 1")
        if self.ewc_lambda < 0:
            raise ConfigError("ewc_lambda must be nonnegative")
        if self.energy_budget is not None and not self.energy_budget > 0:
            raise ConfigError("energy_budget must be positive when given")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layout"]["encoder_widths"] = list(self.layout.encoder_widths)
        d["layout"]["head_hidden"] = list(self.layout.head_hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(_strict(cls, data, "config"))
        if "seed" not in data:
            raise ConfigError("config: 'seed' is mandatory")
        if "method" not in data:
            raise ConfigError("config: 'method' is mandatory")
        nested = {"stream": StreamConfig, "layout": LayoutConfig, "schedule": LrSchedule,
                  "cost_model": CostModel}
        for key, sub in nested.items():
            if key in data:
                data[key] = sub(**_strict(sub, data[key], key))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(data)


def _derive(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


# --------------------------------------------------------------------------- report


@dataclass
class RunReport:
    config: dict
    metrics: M.MetricsReport
    ledger: EnergyLedger
    routing: list  # per task: {"task", "pathway", "counts"}
    loss_matrix: list  # [i][t], None where task i was not yet seen
    acc_matrix: list
    random_loss: list
    budget: list = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)
    snapshots: list = field(default=None, compare=False)
    fishers: list = field(default=None, compare=False)
    store: object = field(default=None, compare=False)
    router: object = field(default=None, compare=False)
    routing_records: list = field(default=None, compare=False)

    @property
    def method(self) -> str:
        return self.config["method"]

    @property
    def config_hash(self) -> str:
        return RunConfig.from_dict(self.config).hash

    @property
    def n_tasks(self) -> int:
        return len(self.loss_matrix)

    def cost_model(self) -> CostModel:
        return CostModel(**self.config["cost_model"])

    def energy(self, phases=None) -> float:
        return total_energy(self.ledger, self.cost_model(), phases)

    def final(self, metric: str):
        if self.n_tasks == 0:
            return None
        return self.metrics.get(metric, self.n_tasks - 1)

    def mean_forgetting(self) -> float:
        """Mean loss increase over all earlier tasks after the last task."""
        v = self.final("mean_forgetting")
        return 0.0 if v is None else v

    def final_mean_loss(self) -> float:
        T = self.n_tasks
        return float(np.mean([self.loss_matrix[i][T - 1] for i in range(T)])) if T else 0.0

    def routing_record_iter(self, task_pos: int):
        """Training-time :class:`~pathway_cl.router.RoutingRecord` rows for one task."""
        from .router import RoutingRecord

        ks, alphas = self.routing_records[task_pos]
        tid = self.routing[task_pos]["task"]
        for n, (k, a) in enumerate(zip(ks, alphas)):
            yield RoutingRecord(n, tid, int(k), tuple(float(v) for v in a))

    def to_summary(self) -> dict:
        cm = self.cost_model()
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "metrics": self.metrics.to_list(),
            "ledger": self.ledger.to_dict(),
            "energy": {**{p: total_energy(self.ledger, cm, [p]) for p in PHASES},
                       "total": total_energy(self.ledger, cm)},
            "routing": self.routing,
            "loss_matrix": self.loss_matrix,
            "acc_matrix": self.acc_matrix,
            "random_loss": self.random_loss,
            "budget": self.budget,
            "headline": {
                "final_stability": self.final("S"),
                "final_plasticity": self.final("P"),
                "mean_forgetting": self.mean_forgetting(),
                "final_mean_loss": self.final_mean_loss(),
            },
        }

    @classmethod
    def from_summary(cls, d: dict) -> "RunReport":
        return cls(d["config"], M.MetricsReport.from_list(d["metrics"]), EnergyLedger.from_dict(d["ledger"]),
                   d["routing"], d["loss_matrix"], d["acc_matrix"], d["random_loss"], d["budget"])


# --------------------------------------------------------------------------- training


def agem_project(grad, ref_grad):
    """Remove the component of ``grad`` that conflicts with ``ref_grad``."""
    grad = np.asarray(grad, dtype=float)
    ref_grad = np.asarray(ref_grad, dtype=float)
    if grad.shape != ref_grad.shape:
        raise ConfigError("gradient and reference gradient lengths differ")
    dot = float(grad @ ref_grad)
    ref_sq = float(ref_grad @ ref_grad)
    if dot >= 0 or ref_sq == 0.0:
        return grad
    return grad - (dot / ref_sq) * ref_grad


class _Run:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.stream = config.stream.build(config.seed)
        self.papi = config.method in PAPI_METHODS
        self.K = config.K if self.papi else 1
        sc = config.stream
        self.layout = config.layout.build(sc.input_dim, sc.n_classes, self.K)
        self.store = build(self.layout, self.K, _derive(config.seed, 1))
        self.ledger = EnergyLedger()
        self.rng = np.random.default_rng([config.seed, 2])
        self.router = None
        if config.method == "papi":
            self.router = Router(self.K, config.router_embed_dim, self.layout.feature_dim,
                                 config.router_hidden, seed=_derive(config.seed, 3))
        self.data = []
        for t, spec in enumerate(self.stream):
            xtr, ytr = sample_batch(spec, sc.n_train, _derive(config.seed, 10, t))
            xev, yev = sample_batch(spec, sc.n_eval, _derive(config.seed, 11, t))
            self.data.append((xtr, ytr, xev, yev))
        self.snapshots = []
        self.fishers = []
        self.prox_w = []
        self.prox_anchor = []
        self.memory = []  # A-GEM episodic memory
        self.route_buffer = []  # (x, task_id, pathway) rows for router training
        self.routing_records = []

    def pathway_of(self, pos: int) -> int:
        return pos % self.K

    def _route(self, x, pos, phase_records=None):
        if self.router is not None:
            tid = self.stream.tasks[pos].task_id
            ks, alphas = self.router.route_batch(encode(self.store, x), tid, self.ledger)
            if phase_records is not None:
                phase_records.append((ks, alphas))
            return ks
        return np.full(len(x), self.pathway_of(pos))

    def evaluate(self, pos: int):
        _, _, x, y = self.data[pos]
        ks = self._route(x, pos)
        losses = np.empty(len(y))
        correct = np.empty(len(y), dtype=bool)
        for k in np.unique(ks):
            sel = ks == k
            probs, _ = pathway_forward(self.store, int(k), x[sel], self.ledger, "inference")
            probs = np.atleast_2d(probs)
            losses[sel] = per_sample_loss(self.layout.heads[k], probs, y[sel])
            correct[sel] = probs.argmax(axis=1) == y[sel]
        return float(losses.mean()), float(correct.mean()), float(np.mean(ks == self.pathway_of(pos)))

    def train_router(self, pos: int):
        cfg = self.cfg
        xtr = self.data[pos][0]
        take = self.rng.permutation(len(xtr))[: cfg.router_samples]
        self.route_buffer.append((xtr[take], self.stream.tasks[pos].task_id, self.pathway_of(pos)))
        xs = np.concatenate([b[0] for b in self.route_buffer])
        tids = np.concatenate([np.full(len(b[0]), b[1]) for b in self.route_buffer])
        targets = np.concatenate([np.full(len(b[0]), b[2]) for b in self.route_buffer])
        h = encode(self.store, xs)
        sched = LrSchedule(cfg.router_lr)
        step = 0
        for _ in range(cfg.router_epochs):
            for idx in self._batches(len(xs)):
                step += 1
                self.router.train_step(h[idx], tids[idx], targets[idx], sched, step, ledger=self.ledger)

    def _batches(self, n):
        perm = self.rng.permutation(n)
        return [perm[i:i + self.cfg.batch_size] for i in range(0, n, self.cfg.batch_size)]

    def _ref_grad(self):
        xm = np.concatenate([m[0] for m in self.memory])
        ym = np.concatenate([m[1] for m in self.memory])
        pick = self.rng.choice(len(xm), size=min(self.cfg.batch_size, len(xm)), replace=False)
        _, cache = pathway_forward(self.store, 0, xm[pick], self.ledger, "train")
        return pathway_backward(self.store, cache, ym[pick], ledger=self.ledger)

    def train_task(self, pos: int, epoch_hook=None):
        cfg = self.cfg
        xtr, ytr = self.data[pos][:2]
        counts = np.zeros(self.K, dtype=np.int64)
        records = []
        step = 0
        # penalized coordinates; the penalty is applied as an exact proximal step
        W = np.sum(self.prox_w, axis=0) if self.prox_w else None
        for epoch in range(cfg.epochs):
            if epoch and epoch_hook is not None:
                epoch_hook(self, pos, epoch)
            for idx in self._batches(len(xtr)):
                step += 1
                xb, yb = xtr[idx], ytr[idx]
                ks = self._route(xb, pos, records)
                counts += np.bincount(ks, minlength=self.K)
                grad = np.zeros(self.store.n_params)
                mask = np.zeros(self.store.n_params, dtype=bool)
                batch_loss = 0.0
                for k in np.unique(ks):
                    k = int(k)
                    sel = ks == k
                    w = sel.sum() / len(ks)
                    probs, cache = pathway_forward(self.store, k, xb[sel], self.ledger, "train")
                    batch_loss += w * float(np.mean(per_sample_loss(self.layout.heads[k], probs, yb[sel])))
                    if not np.isfinite(batch_loss):
                        raise RunAborted(f"non-finite loss in {cfg.method} run: task position {pos}, step {step}")
                    grad += w * pathway_backward(self.store, cache, yb[sel], ledger=self.ledger)
                    mask[active_params(self.store, k)] = True
                if cfg.method == "agem_lite" and self.memory:
                    grad = agem_project(grad, self._ref_grad())
                theta = sgd_step(self.store.theta, grad, cfg.schedule, step)
                if W is not None:
                    touched = mask & (W > 0)
                    n_touched = int(touched.sum())
                    if n_touched:
                        eta = cfg.schedule.rate(step)
                        theta = quadratic_prox(theta, self.prox_w, self.prox_anchor, eta, mask=touched)
                        self.ledger.record("train", flops=4 * n_touched, param_accesses=n_touched)
                self.store.theta = theta
        if records:
            ks = np.concatenate([r[0] for r in records])
            alphas = np.concatenate([r[1] for r in records])
        else:
            ks = np.full(int(counts.sum()), self.pathway_of(pos))
            alphas = np.zeros((0, self.K))
        self.routing_records.append((ks, alphas))
        return counts

    def consolidate(self, pos: int, counts):
        cfg = self.cfg
        tid = self.stream.tasks[pos].task_id
        xtr, ytr = self.data[pos][:2]
        chosen = np.repeat(np.arange(self.K), counts)
        snap = TaskSnapshot(tid, self.store.theta.copy(), usage_from_routing(self.store, chosen))
        self.snapshots.append(snap)
        fisher = None
        if cfg.method == "ewc_mono" or (cfg.method in PAPI_METHODS and cfg.papi_ewc):
            fisher = estimate_fisher_diag(self.store, self.pathway_of(pos), xtr, cfg.fisher_samples,
                                          _derive(cfg.seed, 20, pos), task=tid, ledger=self.ledger)
        self.fishers.append(fisher)
        if cfg.method in PAPI_METHODS:
            self.prox_w.append(snap.usage)
            self.prox_anchor.append(snap.theta)
        if fisher is not None:
            self.prox_w.append(0.5 * cfg.ewc_lambda * fisher.values)
            self.prox_anchor.append(snap.theta)
        if cfg.method == "agem_lite":
            keep = self.rng.permutation(len(xtr))[: cfg.agem_memory]
            self.memory.append((xtr[keep], ytr[keep]))


def run_method(config: RunConfig, *, epoch_hook=None) -> RunReport:
    """Train through the task stream with one method and measure everything.

    ``epoch_hook(run, pos, epoch)`` is called between epochs of each task, for
    experiments that need mid-task checkpoints; it must not touch the ledger.
    """
    start = time.perf_counter()
    run = _Run(config)
    T = len(run.stream)
    rep = M.MetricsReport()
    loss_m = [[None] * T for _ in range(T)]
    acc_m = [[None] * T for _ in range(T)]
    rand = []
    for pos, spec in enumerate(run.stream):
        xev, yev = run.data[pos][2:]
        arch = run.layout.pathway_arch(run.pathway_of(pos))
        rand.append(random_baseline_loss(spec, arch, config.n_random_inits, seed=_derive(config.seed, 30, pos),
                                         data=(xev, yev)))
    budget_rows = []
    routing = []
    for t in range(T):
        tid = run.stream.tasks[t].task_id
        loss_before, _, _ = run.evaluate(t)
        if run.router is not None:
            run.train_router(t)
        counts = run.train_task(t, epoch_hook)
        run.consolidate(t, counts)
        routing.append({"task": int(tid), "pathway": run.pathway_of(t), "counts": [int(c) for c in counts]})
        route_acc = []
        for i in range(t + 1):
            loss_m[i][t], acc_m[i][t], ra = run.evaluate(i)
            route_acc.append(ra)
            rep.add(i, t, "loss", loss_m[i][t])
            rep.add(i, t, "acc", acc_m[i][t])
        s_vals = []
        for i in range(t):
            rep.add(i, t, "forgetting", M.forgetting(loss_m[i][t], loss_m[i][i]))
            triple = M.LossTriple(loss_m[i][t], loss_m[i][i], rand[i])
            if triple.degenerate:
                # task i was never learned better than chance; its stability is undefined
                rep.add(i, t, "degenerate", 1.0)
                log.warning("degenerate stability normalization for task %d at t=%d", i, t)
                if triple.loss_random != triple.loss_snapshot:
                    rep.add(i, t, "S_raw", M.stability_ratio(triple).raw)
                continue
            s = M.stability_ratio(triple)
            rep.add(i, t, "S", s.value)
            rep.add(i, t, "S_raw", s.raw)
            s_vals.append(s.value)
        if s_vals:
            rep.add(-1, t, "S", M.average_stability(s_vals))
        if t > 0:
            rep.add(-1, t, "mean_forgetting", float(np.mean([loss_m[i][t] - loss_m[i][i] for i in range(t)])))
        try:
            rep.add(-1, t, "P", M.plasticity_ratio(rand[t], loss_m[t][t], loss_before))
        except DegenerateNormalizationError:
            log.warning("degenerate plasticity normalization at t=%d", t)
        rep.add(-1, t, "loss_before", loss_before)
        rep.add(-1, t, "mean_acc", float(np.mean([acc_m[i][t] for i in range(t + 1)])))
        if config.method in PAPI_METHODS:
            rep.add(-1, t, "routing_accuracy", float(np.mean(route_acc)))
        for p in PHASES:
            rep.add(-1, t, f"energy_{p}", total_energy(run.ledger, config.cost_model, [p]))
        if config.energy_budget is not None:
            chk = check_budget(run.ledger, config.cost_model, config.energy_budget)
            budget_rows.append({"t": t, "ok": chk.ok, "margin": chk.margin, "total": chk.total})
            if not chk.ok:
                log.warning("energy budget exceeded after task %d (margin %.6g)", t, chk.margin)
    return RunReport(config.to_dict(), rep, run.ledger, routing, loss_m, acc_m, rand, budget_rows,
                     wall_time=time.perf_counter() - start, snapshots=run.snapshots, fishers=run.fishers,
                     store=run.store, router=run.router, routing_records=run.routing_records)


def _run_many(configs, workers: int):
    if workers <= 1 or len(configs) <= 1:
        return [run_method(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_method, configs))


# --------------------------------------------------------------------------- sweeps and comparisons


@dataclass
class SweepResult:
    rows: list  # dicts sorted by K
    gain_per_pathway: Optional[float]

    def to_csv(self) -> str:
        cols = ["K", "S_t", "P_t", "mean_forgetting", "E_total", "E_train", "E_routing",
                "E_inference_per_sample", "active_ratio", "error"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in cols])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"rows": self.rows, "gain_per_pathway": self.gain_per_pathway}


def sweep_k(base_config: RunConfig, K_list, workers: int = 1) -> SweepResult:
    """One run per K with matched total head capacity (heads shrink as K grows)."""
    K_list = sorted({int(k) for k in K_list})
    if not K_list:
        raise ConfigError("K_list must be nonempty")
    if base_config.method not in PAPI_METHODS:
        raise ConfigError("sweep_k needs a papi method")
    configs = [base_config.replace(K=k) for k in K_list]
    rows = []
    try:
        reports = _run_many(configs, workers)
        errors = [None] * len(configs)
    except Exception:
        reports, errors = [], []
        for c in configs:
            try:
                reports.append(run_method(c))
                errors.append(None)
            except Exception as exc:  # recorded per row
                reports.append(None)
                errors.append(f"{type(exc).__name__}: {exc}")
    for k, rep, err in zip(K_list, reports, errors):
        if rep is None:
            rows.append({"K": k, "error": err})
            continue
        n_inf = rep.ledger.get("inference", "samples")
        rows.append({
            "K": k,
            "S_t": rep.final("S"),
            "P_t": rep.final("P"),
            "mean_forgetting": rep.mean_forgetting(),
            "E_total": rep.energy(),
            "E_train": rep.energy(["train"]),
            "E_routing": rep.energy(["routing"]),
            "E_inference_per_sample": rep.energy(["inference"]) / n_inf if n_inf else None,
            "active_ratio": len(active_params(rep.store, 0)) / rep.store.n_params,
            "error": None,
        })
    ok = [(r["K"], r["S_t"]) for r in rows if r.get("error") is None and r.get("S_t") is not None]
    gain = None
    if len(ok) >= 2:
        ks, ss = np.array(ok, dtype=float).T
        gain = float(np.polyfit(ks, ss, 1)[0])
    return SweepResult(rows, gain)


COMPARISON_CHECKS = ("forgetting", "energy", "final_loss")

# expected trends: (better method group, worse method group, relation), lower values are better
_PAPI = frozenset(PAPI_METHODS)
EXPECTED_TRENDS = {
    "forgetting": [(_PAPI, {"ewc_mono"}, "<="), ({"ewc_mono"}, {"naive"}, "<="), (_PAPI, {"naive"}, "<=")],
    "energy": [(_PAPI, {"ewc_mono"}, "<"), ({"ewc_mono"}, {"agem_lite"}, "<"), (_PAPI, {"agem_lite"}, "<"),
               (_PAPI, {"naive"}, "<")],
    "final_loss": [(_PAPI, {"ewc_mono"}, "<="), (_PAPI, {"agem_lite"}, "<=")],
}


def _expectation(check, ma, mb):
    """Relation expected between methods ``ma`` and ``mb`` (as written left to right), or ''."""
    flip = {"<": ">", "<=": ">="}
    for better, worse, rel in EXPECTED_TRENDS[check]:
        if ma in better and mb in worse:
            return rel
        if mb in better and ma in worse:
            return flip[rel]
    return ""


def _holds(rel, va, vb):
    return {"<": va < vb, "<=": va <= vb, ">": va > vb, ">=": va >= vb}[rel]


@dataclass
class ComparisonReport:
    labels: list
    values: dict  # check -> list of values aligned with labels
    rows: list
    orderings: dict  # check -> labels sorted best (lowest) first

    def to_csv(self) -> str:
        cols = ["check", "a", "b", "value_a", "value_b", "relation", "expected", "holds"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r["check"], r["a"], r["b"], repr(r["value_a"]), repr(r["value_b"]), r["relation"],
                        r["expected"], "" if r["holds"] is None else r["holds"]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"labels": self.labels, "values": self.values, "rows": self.rows, "orderings": self.orderings}


def _metric_values(report: RunReport):
    return {"forgetting": report.mean_forgetting(), "energy": report.energy(),
            "final_loss": report.final_mean_loss()}


def compare_reports(reports) -> ComparisonReport:
    labels = []
    for i, r in enumerate(reports):
        name = r.method
        labels.append(name if [x.method for x in reports].count(name) == 1 else f"{name}#{i}")
    vals = [_metric_values(r) for r in reports]
    values = {c: [v[c] for v in vals] for c in COMPARISON_CHECKS}
    rows = []
    for check in COMPARISON_CHECKS:
        for a in range(len(reports)):
            for b in range(a + 1, len(reports)):
                va, vb = values[check][a], values[check][b]
                rel = "<" if va < vb else ">" if va > vb else "="
                expected = _expectation(check, reports[a].method, reports[b].method)
                holds = _holds(expected, va, vb) if expected else None
                rows.append({"check": check, "a": labels[a], "b": labels[b], "value_a": va, "value_b": vb,
                             "relation": rel, "expected": expected, "holds": holds})
    orderings = {c: [labels[i] for i in sorted(range(len(labels)), key=lambda i: (values[c][i], i))]
                 for c in COMPARISON_CHECKS}
    return ComparisonReport(labels, values, rows, orderings)


def check_comparable(configs) -> None:
    if not configs:
        raise ConfigError("compare needs at least one config")
    ref = configs[0]
    for c in configs[1:]:
        if c.stream != ref.stream or c.seed != ref.seed:
            raise ConfigError("compared configs must share the task stream and seed")


def compare(configs, workers: int = 1) -> ComparisonReport:
    """Run every config on a shared stream and seed and tabulate the trend checks."""
    configs = list(configs)
    check_comparable(configs)
    return compare_reports(_run_many(configs, workers))


# --------------------------------------------------------------------------- emission


def _write(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_report(report: RunReport, out_dir) -> list:
    """Write metrics, ledger, loss-curve and per-t series CSVs plus a JSON summary."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    h = report.config_hash
    T = report.n_tasks
    curves = [(i, t, report.loss_matrix[i][t], report.acc_matrix[i][t])
              for t in range(T) for i in range(t + 1)]
    series_metrics = ("S", "P", "mean_forgetting", "mean_acc", "routing_accuracy",
                      "energy_train", "energy_inference", "energy_routing")
    series = [[t] + [report.metrics.get(m, t) for m in series_metrics] for t in range(T)]
    files = {
        f"metrics_{h}.csv": report.metrics.to_csv(h, report.method),
        f"ledger_{h}.csv": report.ledger.to_csv(),
        f"losses_{h}.csv": _csv(["i", "t", "loss", "acc"], curves),
        f"series_{h}.csv": _csv(["t", *series_metrics], series),
        f"summary_{h}.json": _dumps(report.to_summary()),
    }
    paths = []
    for name, text in files.items():
        _write(out / name, text)
        paths.append(out / name)
    return paths


def emit_sweep(result: SweepResult, base_config: RunConfig, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = base_config.hash
    p1, p2 = out / f"sweep_{h}.csv", out / f"sweep_{h}.json"
    _write(p1, result.to_csv())
    _write(p2, _dumps({"config": base_config.to_dict(), **result.to_dict()}))
    return [p1, p2]


def emit_comparison(result: ComparisonReport, configs, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = hashlib.sha256("".join(c.hash for c in configs).encode()).hexdigest()[:12]
    p1, p2 = out / f"compare_{h}.csv", out / f"compare_{h}.json"
    _write(p1, result.to_csv())
    _write(p2, _dumps({"configs": [c.to_dict() for c in configs], **result.to_dict()}))
    return [p1, p2]
