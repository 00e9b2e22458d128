"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import json

import numpy as np
import pytest

from pathway_cl.cli import main
from pathway_cl.energy import active_ratio_check, verify_energy_bound
from pathway_cl.experiments import forgetting_fidelity, routing_convergence
from pathway_cl.harness import RunConfig, StreamConfig, compare_reports, run_method, sweep_k
from pathway_cl.metrics import LossTriple, average_stability, stability_ratio
from pathway_cl.regularization import estimate_fisher_diag, lambda_max, predict_forgetting
from pathway_cl.router import EvalSet, routing_discrepancy

from helpers import (gradcheck_error, logistic_fisher_closed_form, logistic_store, random_gradcheck_case,
                     record_criterion)

SEED = 0


@pytest.fixture(scope="module")
def default_runs():
    return {m: run_method(RunConfig(m, SEED)) for m in ("naive", "ewc_mono", "agem_lite", "papi")}


def test_criterion_01_forgetting_pattern():
    stream = StreamConfig(n_tasks=2)
    naive = run_method(RunConfig("naive", SEED, stream=stream))
    papi = run_method(RunConfig("papi", SEED, stream=stream, K=2))
    drop_naive = naive.acc_matrix[0][0] - naive.acc_matrix[0][1]
    drop_papi = papi.acc_matrix[0][0] - papi.acc_matrix[0][1]
    ok = drop_naive >= 0.30 and abs(drop_papi) <= 0.05
    record_criterion(1, "forgetting pattern", ok,
                     f"naive task-0 acc {naive.acc_matrix[0][0]:.3f}->{naive.acc_matrix[0][1]:.3f} "
                     f"(drop {drop_naive:.3f} >= 0.30); papi {papi.acc_matrix[0][0]:.3f}->"
                     f"{papi.acc_matrix[0][1]:.3f} (|drop| {abs(drop_papi):.3f} <= 0.05)")


def test_criterion_02_gradient_correctness():
    rng = np.random.default_rng(SEED)
    errs = [gradcheck_error(*random_gradcheck_case(rng)) for _ in range(100)]
    worst = max(errs)
    record_criterion(2, "gradient correctness", worst < 1e-4,
                     f"max relative error {worst:.2e} < 1e-4 over 100 configs")


def test_criterion_03_fisher_oracles():
    store = logistic_store()
    x = np.random.default_rng(1).normal(size=(500, 1))
    est = estimate_fisher_diag(store, 0, x, 100_000, seed=2).values
    ref = logistic_fisher_closed_form(store, x[:, 0])
    fisher_err = float(np.max(np.abs(est - ref) / ref))

    rng = np.random.default_rng(3)
    eig_err = 0.0
    for _ in range(50):
        A = rng.normal(size=(10, 10))
        F = A @ A.T
        eig_err = max(eig_err, abs(lambda_max(F).value - np.linalg.eigvalsh(F)[-1]))

    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        A = rng.normal(size=(n, int(rng.integers(1, 12))))
        F = A @ A.T if rng.random() < 0.5 else np.abs(rng.normal(size=n))
        q, b = predict_forgetting(rng.normal(size=n) * rng.exponential(), F)
        violations += b < q - 1e-9 * max(1.0, abs(q))
    ok = fisher_err <= 0.05 and eig_err <= 1e-6 and violations == 0
    record_criterion(3, "Fisher oracles", ok,
                     f"logistic Fisher rel err {fisher_err:.4f} <= 0.05; lambda_max abs err {eig_err:.1e} <= 1e-6; "
                     f"bound < quadratic in {violations}/1000 cases")


def test_criterion_04_forgetting_predictor_fidelity():
    cfg = RunConfig("ewc_mono", SEED, stream=StreamConfig(n_tasks=4), ewc_lambda=1e4)
    res = forgetting_fidelity(cfg)
    record_criterion(4, "forgetting-predictor fidelity", res.r2 >= 0.5,
                     f"r^2 {res.r2:.3f} >= 0.5 over {len(res.pairs)} (task, checkpoint) points")


@pytest.fixture(scope="module")
def convergence():
    return routing_convergence()


def test_criterion_05_routing_convergence(convergence):
    res = convergence
    ok = -1.3 <= res.slope <= -0.7 and res.monotone
    record_criterion(5, "routing convergence", ok,
                     f"log-log slope {res.slope:.3f} in [-1.3, -0.7]; discrepancy windows "
                     f"{np.array2string(res.windows, precision=5)} non-increasing={res.monotone}; "
                     f"discrepancy slope {res.discrepancy_slope:.3f}")


def test_discrepancy_decays_at_comparable_rate(convergence):
    assert -1.3 <= convergence.discrepancy_slope <= -0.5


def test_criterion_06_routing_accuracy(default_runs):
    rep = default_runs["papi"]
    acc = rep.final("routing_accuracy")
    record_criterion(6, "routing accuracy", acc >= 0.90, f"routing accuracy {acc:.4f} >= 0.90 on 3 tasks")


@pytest.fixture(scope="module")
def k_runs():
    full = run_method(RunConfig("naive", SEED))
    return full, {K: run_method(RunConfig("papi", SEED, K=K)) for K in (2, 4, 8)}


def test_criterion_07_energy_bound(k_runs):
    full, papis = k_runs
    parts, ok = [], True
    for K, rep in papis.items():
        holds, slack = verify_energy_bound(rep.energy(), full.energy(), K, rep.energy(["routing"]))
        ok &= holds
        parts.append(f"K={K} slack {slack:.3g}")
    record_criterion(7, "energy bound", ok, "; ".join(parts))


def test_criterion_08_active_parameter_scaling(k_runs):
    full, papis = k_runs
    parts, ok = [], True
    for K, rep in papis.items():
        e_ratio, p_ratio = active_ratio_check(rep.ledger, full.ledger, rep.store, rep.cost_model())
        rel = abs(e_ratio - p_ratio) / p_ratio
        ok &= rel <= 0.10
        parts.append(f"K={K} energy {e_ratio:.4f} vs params {p_ratio:.4f} ({100 * rel:.1f}%)")
    record_criterion(8, "active-parameter scaling", ok, "; ".join(parts) + " within 10%")


def test_criterion_09_stability_vs_k():
    base = RunConfig("papi_oracle_routing", SEED, stream=StreamConfig(n_tasks=4))
    res = sweep_k(base, [1, 2, 4, 8])
    S = {r["K"]: r["S_t"] for r in res.rows}
    seq = [S[k] for k in (1, 2, 4, 8)]
    ok = None not in seq and S[4] > S[1] and all(a <= b for a, b in zip(seq, seq[1:]))
    record_criterion(9, "stability vs K", ok,
                     "S_t " + ", ".join(f"K={k}: {S[k]:.4f}" for k in (1, 2, 4, 8))
                     + f"; fitted gain per pathway {res.gain_per_pathway:.4f}")


def test_criterion_10_comparative_trends(default_runs):
    r = default_runs
    f = {m: r[m].mean_forgetting() for m in r}
    e = {m: r[m].energy() for m in r}
    ok = f["papi"] <= f["ewc_mono"] <= f["naive"] and e["papi"] < e["ewc_mono"] < e["agem_lite"]
    cmp = compare_reports([r["papi"], r["ewc_mono"], r["naive"], r["agem_lite"]])
    ok &= all(row["holds"] is not False for row in cmp.rows if row["check"] in ("forgetting", "energy"))
    record_criterion(10, "comparative trends", ok,
                     f"forgetting papi {f['papi']:.4f} <= ewc {f['ewc_mono']:.4f} <= naive {f['naive']:.4f}; "
                     f"energy papi {e['papi']:.4g} < ewc {e['ewc_mono']:.4g} < agem {e['agem_lite']:.4g}")


def test_criterion_11_metric_identities(default_runs):
    rng = np.random.default_rng(SEED)
    endpoint_fail = 0
    for _ in range(1000):
        snap, rand = sorted(rng.exponential(size=2) + [0.0, 1e-6])
        endpoint_fail += stability_ratio(LossTriple(snap, snap, rand)).value != 1.0
        endpoint_fail += stability_ratio(LossTriple(rand, snap, rand)).value != 0.0

    mean_fail = 0
    for rep in default_runs.values():
        for t in range(1, rep.n_tasks):
            vals = [rep.metrics.get("S", t, i) for i in range(t)]
            vals = [v for v in vals if v is not None]
            if vals and rep.metrics.get("S", t) != average_stability(vals):
                mean_fail += 1
    for _ in range(200):
        vals = list(rng.random(int(rng.integers(1, 20))))
        mean_fail += abs(average_stability(vals) - sum(vals) / len(vals)) > 1e-15

    disc_fail = 0
    for _ in range(500):
        n, K = int(rng.integers(1, 60)), int(rng.integers(1, 6))
        a, b = rng.integers(0, K, n), rng.integers(0, K, n)
        es = EvalSet(np.zeros((n, 1)), np.zeros(n, dtype=int))
        disc_fail += routing_discrepancy(a, b, es) != 2 * np.mean(a != b)
    ok = endpoint_fail == mean_fail == disc_fail == 0
    record_criterion(11, "metric identities", ok,
                     f"endpoint failures {endpoint_fail}/2000; S_t mean failures {mean_fail}; "
                     f"discrepancy != 2*disagreement in {disc_fail}/500")


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_12_cli_determinism(tmp_path):
    stream = {"n_tasks": 2, "n_train": 500, "n_eval": 200}
    cfgs = {}
    for m in ("papi", "ewc_mono"):
        cfgs[m] = tmp_path / f"{m}.json"
        cfgs[m].write_text(json.dumps({"method": m, "seed": SEED, "K": 2, "stream": stream}))
    commands = {
        "run": lambda out: ["run", "--config", str(cfgs["papi"]), "--out", str(out)],
        "sweep-k": lambda out: ["sweep-k", "--config", str(cfgs["papi"]), "--k", "1,2", "--workers", "2",
                                "--out", str(out)],
        "compare": lambda out: ["compare", "--configs", str(cfgs["papi"]), str(cfgs["ewc_mono"]), "--out", str(out)],
        "report": lambda out: ["report", "--in", str(tmp_path / "run_a"), "--out", str(out)],
    }
    same, codes = {}, []
    for name, argv in commands.items():
        trees = []
        for tag in "ab":
            out = tmp_path / f"{name.replace('-', '_')}_{tag}"
            codes.append(main(argv(out)))
            trees.append(_tree(out))
        same[name] = bool(trees[0]) and trees[0] == trees[1]
    ok = all(same.values()) and not any(codes)
    detail = ", ".join(f"{k}={v}" for k, v in same.items())
    record_criterion(12, "determinism", ok, f"byte-identical outputs: {detail}")
