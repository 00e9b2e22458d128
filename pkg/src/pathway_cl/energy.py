"""Abstract energy accounting.

Work is booked as integer counters (flops, parameter accesses, routing messages)
per phase; a :class:`CostModel` turns counters into a scalar energy in abstract
joules. Counters are exact so bound checks are exact.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

from .errors import ConfigError, ContractError

PHASES = ("train", "inference", "routing")
COUNTERS = ("flops", "param_accesses", "messages", "samples")
# `samples` tracks how many inputs a phase processed; it carries no energy.
ENERGY_COUNTERS = ("flops", "param_accesses", "messages")


@dataclass(frozen=True)
class CostModel:
    joules_per_flop: float = 1.0
    joules_per_param_access: float = 0.1
    joules_per_routing_msg: float = 5.0

    def __post_init__(self):
        for name in ("joules_per_flop", "joules_per_param_access", "joules_per_routing_msg"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")

    def coefficient(self, counter: str) -> float:
        return {
            "flops": self.joules_per_flop,
            "param_accesses": self.joules_per_param_access,
            "messages": self.joules_per_routing_msg,
        }.get(counter, 0.0)


class EnergyLedger:
    """Monotone per-phase work counters."""

    def __init__(self):
        self._counts = {(p, c): 0 for p in PHASES for c in COUNTERS}

    def record(self, phase: str, *, flops: int = 0, param_accesses: int = 0,
               messages: int = 0, samples: int = 0) -> None:
        if phase not in PHASES:
            raise ConfigError(f"unknown phase {phase!r}")
        for name, value in (("flops", flops), ("param_accesses", param_accesses),
                            ("messages", messages), ("samples", samples)):
            value = int(value)
            if value < 0:
                raise ContractError(f"ledger counters never decrease ({name}={value})")
            self._counts[(phase, name)] += value

    def get(self, phase: str, counter: str) -> int:
        return self._counts[(phase, counter)]

    def counts(self) -> dict:
        return dict(self._counts)

    def merge(self, other: "EnergyLedger") -> "EnergyLedger":
        out = EnergyLedger()
        for key in out._counts:
            out._counts[key] = self._counts[key] + other._counts[key]
        return out

    def copy(self) -> "EnergyLedger":
        return EnergyLedger().merge(self)

    def __eq__(self, other):
        return isinstance(other, EnergyLedger) and self._counts == other._counts

    def rows(self):
        """``(phase, counter, value)`` rows in fixed order."""
        return [(p, c, self._counts[(p, c)]) for p in PHASES for c in COUNTERS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "counter", "value"])
        w.writerows(self.rows())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {p: {c: self._counts[(p, c)] for c in COUNTERS} for p in PHASES}

    @classmethod
    def from_dict(cls, data: dict) -> "EnergyLedger":
        led = cls()
        for p in PHASES:
            led.record(p, **{c: data[p][c] for c in COUNTERS})
        return led

    def totals_json(self, cost_model: CostModel) -> str:
        payload = {
            "counters": self.to_dict(),
            "energy": {p: total_energy(self, cost_model, [p]) for p in PHASES},
            "total": total_energy(self, cost_model),
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def total_energy(ledger: EnergyLedger, cost_model: CostModel,
                 phases: Optional[Iterable[str]] = None) -> float:
    phases = PHASES if phases is None else tuple(phases)
    total = 0.0
    for p in phases:
        if p not in PHASES:
            raise ConfigError(f"unknown phase {p!r}")
        for c in ENERGY_COUNTERS:
            total += ledger.get(p, c) * cost_model.coefficient(c)
    return total


class BudgetCheck(NamedTuple):
    ok: bool
    margin: float  # budget - total; negative on violation
    total: float
    budget: float


def check_budget(ledger: EnergyLedger, cost_model: CostModel, budget: float) -> BudgetCheck:
    if not budget > 0:
        raise ConfigError(f"energy budget must be positive, got {budget}")
    total = total_energy(ledger, cost_model)
    return BudgetCheck(total <= budget, budget - total, total, float(budget))


def verify_energy_bound(e_papi: float, e_full: float, K: int, delta_e: float):
    """Check ``e_papi <= e_full / K + delta_e``; returns ``(holds, slack)``."""
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    if min(e_papi, e_full, delta_e) < 0:
        raise ConfigError("energies must be nonnegative")
    slack = e_full / K + delta_e - e_papi
    return slack >= 0, slack


def active_ratio_check(ledger_papi: EnergyLedger, ledger_mono: EnergyLedger, store,
                       cost_model: Optional[CostModel] = None, k: int = 0):
    """Compare inference-phase energy ratio with the active-parameter ratio.

    Both ledgers must have processed the same number of inference samples.
    Returns ``(energy_ratio, param_ratio)``.
    """
    cost_model = cost_model or CostModel()
    n_papi = ledger_papi.get("inference", "samples")
    n_mono = ledger_mono.get("inference", "samples")
    if n_papi != n_mono:
        raise ContractError(f"mismatched inference call counts: {n_papi} vs {n_mono}")
    e_mono = total_energy(ledger_mono, cost_model, ["inference"])
    e_papi = total_energy(ledger_papi, cost_model, ["inference"])
    energy_ratio = e_papi / e_mono if e_mono > 0 else 1.0
    from .pathway_net import active_params  # local: pathway_net books into this module

    param_ratio = len(active_params(store, k)) / store.n_params
    return energy_ratio, param_ratio
