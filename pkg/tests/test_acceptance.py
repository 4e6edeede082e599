"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion is checked at its stated tolerance, including its runtime
limit.  The lines are repeated in an "acceptance criteria" section at the end
of the pytest run.
"""
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

import oracles
from otpower.bench import BenchConfig, run_benchmark, guarantee_instance, timing_scaling_report
from otpower.sketch import BackendConfig, ExactBackend, SketchBackend, band_violation_test
from otpower.tensor import (
    DenseTensor,
    contract_all_but_one,
    contract_all_but_two,
    contract_full,
    random_spectrum,
    synth_orthogonal,
)
from otpower.tpm import (
    PowerMethodConfig,
    check_init_separation,
    decompose,
    deflation_diagnostics,
    epsilon_cap,
    noise_budget,
    run_iterations,
    verify_epsilon_close,
)

pytestmark = pytest.mark.acceptance


def _separated_start(spec, rng, t):
    while True:
        u = oracles.unit(rng, spec.dim)
        if check_init_separation(u, spec, t):
            return u


def _trace_toward(A, spec, rng, T):
    """Power-step trace from a start separated toward the largest component."""
    t = int(np.argmax(spec.eigenvalues))
    u0 = _separated_start(spec, rng, t)
    _, traces, _ = run_iterations(ExactBackend(A), None, u0, T, reference=spec.vectors, k=spec.k)
    tr = traces[0]
    tr.target = t
    return tr, spec.eigenvalues[t]


def test_criterion_1_contraction_oracles(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 7))
        p = int(rng.choice([3, 4, 5]))
        # entries scaled so every contraction output is O(1)
        arr = rng.standard_normal((n,) * p) / math.sqrt(n ** (p - 1))
        A = DenseTensor.from_array(arr)
        u = oracles.unit(rng, n)
        worst = max(
            worst,
            abs(contract_full(A, u) - oracles.full(arr, u)),
            float(np.max(np.abs(contract_all_but_one(A, u) - oracles.all_but_one(arr, u)))),
            float(np.max(np.abs(contract_all_but_two(A, u) - oracles.all_but_two(arr, u)))),
        )
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 30
    criterion(1, ok, f"max abs error {worst:.2e} (tol 1e-12), {elapsed:.1f}s (limit 30s)")
    assert ok


def test_criterion_2_eigen_identity(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(2, 31))
        k = int(rng.integers(1, min(8, n) + 1))
        p = 3 + i % 2
        spec = random_spectrum(rng.uniform(0.1, 5.0, k), n, seed=i)
        u = oracles.unit(rng, n)
        w = contract_all_but_one(synth_orthogonal(spec, p), u)
        lhs = np.abs(spec.vectors @ w)
        rhs = spec.eigenvalues * np.abs(spec.vectors @ u) ** (p - 1)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 20
    criterion(2, ok, f"max deviation {worst:.2e} (tol 1e-10), {elapsed:.1f}s (limit 20s)")
    assert ok


def _recovery_rate(n, k, p, seeds):
    hits = 0
    for seed in seeds:
        A, truth, eps = guarantee_instance(n, k, p, seed)
        cfg = PowerMethodConfig(k=k, epsilon=eps, c0=100, guarantee_mode=True, seed=seed,
                                lambda_min=float(truth.eigenvalues.min()))
        res = decompose(A, cfg)
        hits += verify_epsilon_close(truth, res.eigenvalues, res.vectors, eps, p).guarantee
    return hits


def test_criterion_3_recovery_guarantee(criterion):
    start = time.perf_counter()
    hits3 = _recovery_rate(50, 5, 3, range(20))
    hits4 = _recovery_rate(25, 5, 4, range(20))
    elapsed = time.perf_counter() - start
    ok = hits3 >= 18 and hits4 >= 18 and elapsed < 600
    criterion(3, ok, f"p=3,n=50: {hits3}/20; p=4,n=25: {hits4}/20 (need >= 18 each), "
                     f"{elapsed:.1f}s (limit 600s)")
    assert ok


def test_criterion_4_per_iteration_contraction(criterion):
    start = time.perf_counter()
    n, k, T = 20, 4, 30
    pre_steps = clean_violations = 0
    for i in range(50):
        p = 3 + i % 2
        rng = np.random.default_rng(100 + i)
        spec = random_spectrum(rng.uniform(1.0, 2.0, k), n, seed=100 + i)
        tr, _ = _trace_toward(synth_orthogonal(spec, p), spec, rng, T)
        tin, tout = tr.tan_in, tr.tan_out
        mask = tr.pre_alignment & np.isfinite(tin)
        pre_steps += int(mask.sum())
        clean_violations += int(np.sum(tout[mask] > 0.8 * tin[mask]))

    noisy_steps = noisy_violations = 0
    for i in range(20):
        p = 3 + i % 2
        A, spec, eps = guarantee_instance(n, k, p, seed=200 + i)
        rng = np.random.default_rng(200 + i)
        tr, lam_top = _trace_toward(A, spec, rng, T)
        slack = 18 * eps / (100 * lam_top)
        tin, tout = tr.tan_in, tr.tan_out
        finite = np.isfinite(tin)
        noisy_steps += int(finite.sum())
        noisy_violations += int(np.sum(tout[finite] > 0.8 * tin[finite] + slack))
    elapsed = time.perf_counter() - start
    ok = clean_violations == 0 and noisy_violations == 0 and pre_steps > 0 and elapsed < 120
    criterion(4, ok, f"noiseless: {clean_violations} violations in {pre_steps} pre-alignment steps; "
                     f"noisy: {noisy_violations} in {noisy_steps} steps, {elapsed:.1f}s (limit 120s)")
    assert ok


def _close_perturbation(spec, eps, rng):
    """Random estimates at the edge of epsilon-closeness."""
    k, n = spec.k, spec.dim
    lam, V = spec.eigenvalues, spec.vectors
    lam_hat = lam + eps * rng.uniform(-0.99, 0.99, k)
    V_hat = np.empty_like(V)
    # orthonormal completion so directions outside span(V) are available
    Q = np.linalg.qr(np.column_stack([V.T, rng.standard_normal((n, n - k))]))[0]
    outside = Q[:, k:].T
    for i in range(k):
        dist = rng.uniform(0.5, 0.99) * eps / lam[i]
        angle = 2 * math.asin(dist / 2)
        beta = np.zeros(k)
        for j in range(k):
            if j != i:
                beta[j] = rng.uniform(-0.99, 0.99) * eps / (math.sqrt(n) * lam[i] * math.sin(angle))
        beta = np.clip(beta, -0.5, 0.5)
        z = rng.standard_normal(n - k) @ outside
        z /= np.linalg.norm(z)
        w = beta @ V + math.sqrt(max(0.0, 1 - beta @ beta)) * z
        V_hat[i] = math.cos(angle) * V[i] + math.sin(angle) * w
    return lam_hat, V_hat


def test_criterion_5_deflation_bounds(criterion):
    start = time.perf_counter()
    n, k, p, c0 = 15, 3, 3, 100.0
    violations = cor_checked = 0
    loose_violations = loose_trials = 0
    trials = 0
    rng = np.random.default_rng(55)
    while trials < 100:
        spec = random_spectrum(rng.uniform(1.0, 2.0, k), n, seed=int(rng.integers(2**31)))
        eps = rng.uniform(0.5, 1.0) * spec.eigenvalues[-1] / (2 * c0 * k)
        lam_hat, V_hat = _close_perturbation(spec, eps, rng)
        r = int(rng.integers(1, k))
        gap = rng.uniform(0.0, 1.0) / (c0**2 * p**2 * k)
        cos = 1.0 - gap
        # push the rest of u into the already deflated directions half the time
        if rng.random() < 0.5:
            y = rng.standard_normal(r) @ spec.vectors[:r]
        else:
            y = rng.standard_normal(n)
        y -= (y @ spec.vectors[r]) * spec.vectors[r]
        y /= np.linalg.norm(y)
        u = cos * spec.vectors[r] + math.sqrt(1 - cos * cos) * y
        d = deflation_diagnostics(spec, lam_hat, V_hat, u, eps, p, r=r, c0=c0)
        if not d.applicable:
            continue  # sampler overshot closeness; draw again
        trials += 1
        cor_checked += d.aligned_applicable
        ok = d.norm_bound_holds and d.direction_bound_holds and d.aligned_applicable and d.aligned_holds
        violations += not ok
        # the general bounds alone, for a random query and a looser accuracy
        eps2 = 0.05 * spec.eigenvalues[-1]
        lam2, V2 = _close_perturbation(spec, eps2, rng)
        d2 = deflation_diagnostics(spec, lam2, V2, oracles.unit(rng, n), eps2, p, r=r)
        loose_trials += d2.applicable
        loose_violations += d2.applicable and not (d2.norm_bound_holds and d2.direction_bound_holds)
    elapsed = time.perf_counter() - start
    ok = (violations == 0 and loose_violations == 0 and cor_checked == 100
          and loose_trials > 0 and elapsed < 60)
    criterion(5, ok, f"{violations} violations in {trials} trials (aligned caps applied in {cor_checked}); "
                     f"unaligned trials: {loose_violations} violations in {loose_trials}, {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_6_sketch_contract(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    arr = oracles.random_symmetric(rng, 20, 3)
    A = DenseTensor.from_array(arr)
    res = band_violation_test(A, 0.2, 0.1, trials=200, seed=6)
    u = oracles.unit(rng, 20)
    sk = SketchBackend.from_tensor(A, BackendConfig(epsilon=0.2, delta=0.1, seed=1))
    ex = ExactBackend(A)
    bit_exact = all(
        be.query_res([], np.zeros((20, 0)), u).tobytes() == be.query(u).tobytes() for be in (sk, ex)
    )
    xs = oracles.unit(rng, 20, 3)
    alpha = rng.standard_normal((20, 3))
    want = oracles.all_but_one(arr, u)
    for j in range(3):
        want = want - alpha[:, j] * float(xs[j] @ u) ** 2
    ident = float(np.max(np.abs(ex.query_res(xs, alpha, u) - want)))
    elapsed = time.perf_counter() - start
    ok = res.passed and bit_exact and ident <= 1e-12 and elapsed < 120
    criterion(6, ok, f"max per-coordinate violation rate {res.per_coordinate.max():.3f} "
                     f"(limit {res.threshold:.3f}), k=0 bit-exact {bit_exact}, "
                     f"identity error {ident:.1e}, {elapsed:.1f}s (limit 120s)")
    assert ok


def test_criterion_7_runtime_scaling(criterion):
    start = time.perf_counter()
    ns = [16, 32, 64]
    exact = timing_scaling_report(3, ns, "exact")
    sketch = timing_scaling_report(3, ns, "sketch")
    elapsed = time.perf_counter() - start
    ok = (
        sketch.iter_slope <= 2.4
        and exact.iter_slope >= 2.6
        and 2.6 <= sketch.init_slope <= 3.4
        and elapsed < 300
    )
    criterion(7, ok, f"sketched iter slope {sketch.iter_slope:.2f} (<= 2.4), exact iter slope "
                     f"{exact.iter_slope:.2f} (>= 2.6), sketched init slope {sketch.init_slope:.2f} "
                     f"(in [2.6, 3.4]); exact init slope {exact.init_slope:.2f} for reference, "
                     f"{elapsed:.1f}s (limit 300s)")
    assert ok


def test_criterion_8_benchmark_protocol(criterion):
    start = time.perf_counter()
    cfg = BenchConfig(profile="inverse", n=32, p=3, k=10, sigma=0.01, T=30, L=50,
                      grid=((21, 256), (21, 1024), (21, 4096)), seeds=tuple(range(20)),
                      mode="rank1", record_timings=False)
    res = run_benchmark(cfg)
    failed = sum(r["status"] != "ok" for r in res.rows)
    exact = float(np.median(res.residuals()))
    med = {b: float(np.median(res.residuals(21, b))) for b in (256, 1024, 4096)}
    rel = abs(med[4096] - exact) / exact
    monotone = med[256] >= med[1024] >= med[4096]
    elapsed = time.perf_counter() - start
    ok = failed == 0 and rel <= 0.05 and monotone and elapsed < 600
    criterion(8, ok, f"exact {exact:.4f}; b=256 {med[256]:.4f}, b=1024 {med[1024]:.4f}, "
                     f"b=4096 {med[4096]:.4f} (rel {rel:.2%}, limit 5%), monotone {monotone}, "
                     f"{elapsed:.1f}s (limit 600s)")
    assert ok


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "otpower", *map(str, args)],
                          cwd=cwd, capture_output=True, text=True, check=False)


def _pipeline(workdir):
    n, p, k = 20, 3, 3
    lam_min = 1.0 / k  # inverse decay profile
    eps = 0.99 * epsilon_cap(lam_min, p, k, n, 100.0)
    codes = [
        _cli("gen", "--profile", "inverse", "--n", n, "--p", p, "--k", k, "--seed", 3,
             "--noise-norm", repr(noise_budget(eps, 100.0, n)), "--out", "t.otp", cwd=workdir),
        _cli("decompose", "--in", "t.otp", "--k", k, "--guarantee", "--epsilon", repr(eps),
             "--c0", 100, "--seed", 3, "--out-report", "report.json", cwd=workdir),
        _cli("verify", "--truth", "t.otp.spectrum", "--report", "report.json",
             "--epsilon", repr(eps), cwd=workdir),
    ]
    return [c.returncode for c in codes], (workdir / "report.json").read_bytes(), codes[-1].stdout


def test_criterion_9_cli_pipeline(criterion, tmp_path):
    start = time.perf_counter()
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    codes_a, report_a, verdict = _pipeline(tmp_path / "a")
    codes_b, report_b, _ = _pipeline(tmp_path / "b")
    identical = report_a == report_b
    elapsed = time.perf_counter() - start
    ok = codes_a == [0, 0, 0] and codes_b == [0, 0, 0] and identical and elapsed < 60
    guarantee = json.loads(verdict)["guarantee"] if verdict else None
    criterion(9, ok, f"exit codes {codes_a} and {codes_b}, guarantee {guarantee}, "
                     f"reports identical {identical}, {elapsed:.1f}s (limit 60s)")
    assert ok
