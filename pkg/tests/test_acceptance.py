"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines appear in the
terminal output) or directly with ``python tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest
from scipy.optimize import linprog

from mletpf.filter import (
    MultilevelState,
    mletpf_step,
    multilevel_estimate,
    reweight_state,
    run_filter,
    update_weights,
)
from mletpf.harness import experiments as ex
from mletpf.models import LevelSchedule, NoisePath, lorenz63, lorenz96, substream
from mletpf.ot_core import (
    solve_assignment,
    solve_transport,
    solve_transport_1d,
    squared_distance_cost,
)
from mletpf.transform import (
    CoupledPair,
    WeightedEnsemble,
    etpf_transform,
    random_resample,
    seamless_couple,
    standard_recouple,
)
from oracles import birkhoff_cost, permutation_minimum, random_weights, vertex_enumeration

SEED = 20240611


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


def test_criterion_1_gaussian_consistency(report):
    start = time.perf_counter()
    cfg = ex.ExperimentConfig("consistency", seed=SEED)
    assert cfg.sizes == tuple(2**k for k in range(4, 13)) and cfg.reps == 10
    res = ex.run_consistency_study(cfg)
    elapsed = time.perf_counter() - start
    slopes = {k.split("_")[0]: v for k, v in res.slopes.items()}
    ok = all(abs(s + 0.5) <= 0.15 for s in slopes.values()) and elapsed < 120
    detail = ", ".join(f"{k} {v:+.3f}" for k, v in slopes.items()) + f" ({elapsed:.1f}s)"
    assert report(1, ok, detail)


def test_criterion_2_mean_preservation(report):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 65))
        d = int(rng.integers(1, 6))
        xf = rng.standard_normal((n, d))
        xc = xf + 0.3 * rng.standard_normal((n, d))
        pair = CoupledPair(WeightedEnsemble(xc, random_weights(rng, n, zeros=True)),
                           WeightedEnsemble(xf, random_weights(rng, n, zeros=True)))
        for c, f in (seamless_couple(pair), standard_recouple(pair)):
            worst = max(worst, np.max(np.abs(f.mean(axis=0) - pair.fine.mean())),
                        np.max(np.abs(c.mean(axis=0) - pair.coarse.mean())))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 60
    assert report(2, ok, f"max mean error {worst:.2e} ({elapsed:.1f}s)")


def _highs_cost(p, q, c):
    n = p.size
    A = np.vstack([np.kron(np.eye(n), np.ones(n)), np.kron(np.ones(n), np.eye(n))])
    res = linprog(c.ravel(), A_eq=A, b_eq=np.concatenate([p, q]), bounds=(0, None),
                  method="highs")
    return res.fun


def test_criterion_3_ot_oracles(report):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    err_1d = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 17))
        x = rng.standard_normal(n)
        p, q = random_weights(rng, n), random_weights(rng, n)
        c = squared_distance_cost(x)
        err_1d = max(err_1d, abs(solve_transport_1d(x, p, q).cost(c)
                                 - solve_transport(p, q, c).cost(c)))
    err_vertex = 0.0
    err_highs = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 8))
        c = rng.random((n, n))
        if n <= 4:
            p, q = random_weights(rng, n), random_weights(rng, n)
            oracle = vertex_enumeration(p, q, c)
        else:
            # uniform marginals: the vertices are the scaled permutation matrices
            p = q = np.full(n, 1.0 / n)
            oracle = birkhoff_cost(c)
        cost = solve_transport(p, q, c).cost(c)
        err_vertex = max(err_vertex, abs(cost - oracle))
        pg, qg = random_weights(rng, n), random_weights(rng, n)
        err_highs = max(err_highs, abs(solve_transport(pg, qg, c).cost(c) - _highs_cost(pg, qg, c)))
    err_assign = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 8))
        c = rng.random((n, n))
        sigma = solve_assignment(c)
        err_assign = max(err_assign, abs(c[np.arange(n), sigma].sum() - permutation_minimum(c)[0]))
    elapsed = time.perf_counter() - start
    ok = err_1d <= 1e-10 and err_vertex <= 1e-10 and err_assign <= 1e-12 and elapsed < 60
    detail = (f"1-D vs LP {err_1d:.1e}, LP vs vertices {err_vertex:.1e}, "
              f"LP vs HiGHS {err_highs:.1e}, assignment vs permutations {err_assign:.1e} "
              f"({elapsed:.1f}s)")
    assert report(3, ok, detail)


def _variance_decay(model, **overrides):
    start = time.perf_counter()
    cfg = ex.ExperimentConfig("variance-decay", model=model, seed=SEED, **overrides)
    assert cfg.levels == (1, 2, 3, 4) and cfg.steps == 200
    res = ex.run_variance_decay_study(cfg)
    means = res.config["mean_trace_V"]
    return res.slopes, means, time.perf_counter() - start


def _fmt_levels(values):
    return "[" + ", ".join(f"{v:.2e}" for v in values) + "]"


@pytest.mark.slow
def test_criterion_4_variance_decay_lorenz63(report):
    slopes, means, elapsed = _variance_decay("lorenz63", reps=3)
    bs, bd = slopes["seamless_beta"], slopes["standard_beta"]
    smaller = all(a < b for a, b in zip(means["seamless"], means["standard"]))
    ok = bs >= 1.6 and bd <= 1.4 and smaller and elapsed < 600
    detail = (f"seamless beta {bs:.2f} V {_fmt_levels(means['seamless'])}; "
              f"standard beta {bd:.2f} V {_fmt_levels(means['standard'])} ({elapsed:.0f}s)")
    assert report(4, ok, detail)


@pytest.mark.slow
def test_criterion_5_variance_decay_lorenz96(report):
    slopes, means, elapsed = _variance_decay("lorenz96")
    bs, bd = slopes["seamless_beta"], slopes["standard_beta"]
    smaller = all(a <= b for a, b in zip(means["seamless"], means["standard"]))
    ok = bs >= 1.6 and bd >= 1.6 and smaller and elapsed < 900
    detail = (f"seamless beta {bs:.2f} V {_fmt_levels(means['seamless'])}; "
              f"standard beta {bd:.2f} V {_fmt_levels(means['standard'])} ({elapsed:.0f}s)")
    assert report(5, ok, detail)


def test_criterion_6_cost_scaling(report):
    start = time.perf_counter()
    cfg = ex.ExperimentConfig("cost-accuracy", model="lorenz96", r_loc=0, steps=10, reps=1,
                              seed=SEED, modes=("single", "seamless"))
    assert cfg.epsilons == (0.5, 0.35, 0.25, 0.18)
    res = ex.run_cost_accuracy_study(cfg, with_reference=False)
    single = res.slopes["single_cost_exponent"]
    seamless = res.slopes["seamless_cost_exponent"]
    ok = abs(single + 3) <= 0.4 and abs(seamless + 2) <= 0.4
    detail = (f"single {single:.2f}, seamless {seamless:.2f} "
              f"({time.perf_counter() - start:.1f}s)")
    assert report(6, ok, detail)


def test_criterion_7_property_suite(report):
    rng = np.random.default_rng(SEED)
    failures = []

    # coupling feasibility and vertex sparsity
    for _ in range(100):
        n = int(rng.integers(1, 40))
        p, q = random_weights(rng, n, zeros=True), random_weights(rng, n, zeros=True)
        x = rng.standard_normal((n, 3))
        for d in (solve_transport(p, q, squared_distance_cost(x)),
                  solve_transport_1d(x[:, 0], p, q)):
            m = d.toarray()
            if m.min() < 0 or np.max(np.abs(m.sum(1) - p)) > 1e-9 or np.max(np.abs(m.sum(0) - q)) > 1e-9:
                failures.append("feasibility")
            if d.nnz > 2 * n - 1:
                failures.append("sparsity")

    # weight normalisation
    for _ in range(100):
        e = WeightedEnsemble(3 * rng.standard_normal((25, 2)), random_weights(rng, 25))
        w = update_weights(e, rng.standard_normal(2), 0.05 * np.eye(2)).weights
        if abs(w.sum() - 1) >= 1e-12:
            failures.append("normalisation")

    # telescoping: L=0 equals the ETPF bitwise
    spec = lorenz63()
    sched = LevelSchedule(spec.h0, (24,), 4 * spec.h0)
    truth, obs = ex.generate_twin_data(spec, sched, SEED, 10)
    a = run_filter(spec, sched, obs, "seamless", seed=SEED)
    b = run_filter(spec, sched, obs, "single", seed=SEED)
    if not np.array_equal(a.estimates["mean"], b.estimates["mean"]):
        failures.append("L=0 vs ETPF")
    state = MultilevelState(WeightedEnsemble(rng.standard_normal((12, 3))))
    y, R = rng.standard_normal(3), np.eye(3)
    stepped = mletpf_step(state, y, R)
    if not np.array_equal(stepped.coarse.states, etpf_transform(update_weights(state.coarse, y, R))):
        failures.append("L=0 step")

    # telescoping: identical pairs contribute zero
    x = rng.standard_normal((10, 3))
    w = random_weights(rng, 10)
    pair = CoupledPair(WeightedEnsemble(x, w), WeightedEnsemble(x.copy(), w))
    coarse = WeightedEnsemble(rng.standard_normal((20, 3)))
    weighted = reweight_state(MultilevelState(coarse, (pair, pair)), y, R)
    if not np.array_equal(multilevel_estimate(weighted), weighted.coarse.mean()):
        failures.append("identical pairs")

    # random resample unbiasedness
    e = WeightedEnsemble(rng.standard_normal(6), random_weights(rng, 6))
    draws = np.array([random_resample(e, rng).mean() for _ in range(10_000)])
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    if abs(draws.mean() - e.mean()[0]) > 3 * se:
        failures.append("resample bias")

    # noise coupling identity
    for seed in range(10):
        path = NoisePath.sample(lorenz96(d=5), 4, 16, 2.0**-12, substream(seed, 1))
        if not np.array_equal(path.coarse().increments,
                              path.increments[0::2] + path.increments[1::2]):
            failures.append("noise identity")

    ok = not failures
    assert report(7, ok, "all properties hold" if ok else f"failed: {sorted(set(failures))}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
