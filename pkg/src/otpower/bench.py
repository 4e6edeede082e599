"""Synthetic benchmark instances, residual metrics, sweeps and timing fits."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ._rng import make_rng
from .sketch import BackendConfig, ExactBackend, SketchBackend
from .tensor import (
    DenseTensor,
    NoiseSpec,
    Spectrum,
    check_budget,
    contract_full,
    frobenius_norm,
    gaussian_noise_tensor,
    outer_power,
    random_spectrum,
    symmetric_gaussian_tensor,
    synth_orthogonal,
)
from .tpm import PowerMethodConfig, decompose, epsilon_cap, noise_budget

PROFILES = ("inverse", "inverse-square", "linear")
CSV_COLUMNS = (
    "profile", "n", "p", "k", "sigma", "B", "b", "seed", "mode",
    "residual_sq", "init_ms", "iter_us", "status",
)


@dataclass(frozen=True)
class DecayProfile:
    """Eigenvalue decay: ``1/i``, ``1/i^2`` or ``1 - (i-1)/k`` for ``i = 1..k``."""

    kind: str
    k: int

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise ValueError(f"unknown profile {self.kind!r}; choose from {PROFILES}")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def eigenvalues(self) -> np.ndarray:
        i = np.arange(1, self.k + 1, dtype=np.float64)
        if self.kind == "inverse":
            return 1.0 / i
        if self.kind == "inverse-square":
            return 1.0 / i**2
        return 1.0 - (i - 1.0) / self.k


def gen_synthetic(
    profile: DecayProfile, n: int, p: int, sigma: float, seed: int,
    max_elements: int | None = None,
) -> tuple[DenseTensor, Spectrum]:
    """``sum_i lam_i v_i^(p)`` with random orthonormal ``v_i`` plus symmetric noise.

    ``sigma`` is the per-entry noise standard deviation before symmetrization.
    """
    if profile.k > n:
        raise ValueError(f"k={profile.k} exceeds n={n}")
    check_budget(n, p, max_elements)
    truth = random_spectrum(profile.eigenvalues(), n, seed)
    A = synth_orthogonal(truth, p, max_elements)
    if sigma > 0:
        A = A + symmetric_gaussian_tensor(n, p, sigma, seed, max_elements)
    return A, truth


def residual_sq_frobenius(A: DenseTensor, eigenvalues, vectors, method: str = "expansion") -> float:
    """``|A - sum_i lam_i v_i^(p)|_F^2``.

    The default expands the square so that no second dense tensor is formed:
    ``|A|^2 - 2 sum_i lam_i A(v_i, .., v_i) + sum_ij lam_i lam_j <v_i, v_j>^p``.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64).reshape(-1)
    vecs = np.asarray(vectors, dtype=np.float64).reshape(lam.size, A.dim)
    p = A.order
    if method == "materialize":
        data = A.data.copy()
        for l, v in zip(lam, vecs):
            data -= l * outer_power(v, p).data
        return float(data @ data)
    if method != "expansion":
        raise ValueError(f"unknown method {method!r}")
    total = frobenius_norm(A) ** 2
    if lam.size:
        cross = sum(l * contract_full(A, v) for l, v in zip(lam, vecs))
        gram = (vecs @ vecs.T) ** p
        total += -2.0 * cross + float(lam @ gram @ lam)
    return max(total, 0.0)


@dataclass(frozen=True)
class BenchConfig:
    """One benchmark sweep.

    ``grid`` lists ``(B, b)`` pairs for the sketched backend; every instance
    also gets one exact-backend baseline row.  ``mode`` is ``"rank1"``
    (extract only the top pair) or ``"full"`` (all ``k`` pairs).
    With ``record_timings`` each extraction runs once untimed and then
    ``repetitions`` more times, and the median time is reported; the runs are
    deterministic, so the residual is unaffected.
    """

    profile: str = "inverse"
    n: int = 32
    p: int = 3
    k: int = 10
    sigma: float = 0.01
    T: int = 30
    L: int = 50
    grid: tuple = ((21, 4096),)
    seeds: tuple = (0,)
    mode: str = "rank1"
    repetitions: int = 5
    record_timings: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not self.grid:
            raise ValueError("grid must not be empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.mode not in ("rank1", "full"):
            raise ValueError("mode must be 'rank1' or 'full'")
        DecayProfile(self.profile, self.k)
        object.__setattr__(self, "grid", tuple((int(B), int(b)) for B, b in self.grid))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @classmethod
    def from_dict(cls, raw: dict) -> "BenchConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown bench config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "BenchConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [list(g) for g in self.grid]
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class BenchResult:
    config: BenchConfig
    rows: list = field(default_factory=list)

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({c: _fmt(row.get(c)) for c in CSV_COLUMNS})
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    def residuals(self, B: int | None = None, b: int | None = None) -> np.ndarray:
        """Residuals of successful rows for one grid cell (``None`` = exact)."""
        return np.array([
            r["residual_sq"] for r in self.rows
            if r["status"] == "ok" and r["B"] == B and r["b"] == b
        ])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _run_cell(cfg: BenchConfig, A: DenseTensor, seed: int, B=None, b=None) -> dict:
    row = {
        "profile": cfg.profile, "n": cfg.n, "p": cfg.p, "k": cfg.k, "sigma": cfg.sigma,
        "B": B, "b": b, "seed": seed, "mode": cfg.mode,
        "residual_sq": None, "init_ms": None, "iter_us": None, "status": "ok",
    }
    k_extract = 1 if cfg.mode == "rank1" else cfg.k
    try:
        start = time.perf_counter()
        if B is None:
            backend = ExactBackend(A)
        else:
            bcfg = BackendConfig(sketch_len=b, repetitions=B, seed=int(make_rng(seed, 0xB5).integers(2**62)))
            backend = SketchBackend.from_tensor(A, bcfg)
        init_s = time.perf_counter() - start
        pm = PowerMethodConfig(k=k_extract, T=cfg.T, L=cfg.L, seed=seed)
        result = decompose(backend, pm)
        run_times = []
        for _ in range(max(1, cfg.repetitions) if cfg.record_timings else 0):
            start = time.perf_counter()
            decompose(backend, pm)
            run_times.append(time.perf_counter() - start)
        row["residual_sq"] = float(residual_sq_frobenius(A, result.eigenvalues, result.vectors))
        if cfg.record_timings:
            row["init_ms"] = round(1e3 * init_s, 3)
            row["iter_us"] = round(1e6 * float(np.median(run_times)) / (k_extract * 2 * cfg.T), 3)
    except Exception as exc:  # a failed cell must not abort the sweep
        row["status"] = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def run_benchmark(cfg: BenchConfig) -> BenchResult:
    """Sweep every ``(B, b)`` cell and seed; rows come out sorted.

    ``iter_us`` is the mean wall time of one power step, where a first-phase
    step advances all ``L`` restarts together.
    """
    profile = DecayProfile(cfg.profile, cfg.k)
    rows = []
    for seed in cfg.seeds:
        A, _ = gen_synthetic(profile, cfg.n, cfg.p, cfg.sigma, seed)
        rows.append(_run_cell(cfg, A, seed))
        for B, b in cfg.grid:
            rows.append(_run_cell(cfg, A, seed, B, b))
    rows.sort(key=lambda r: (r["seed"], r["B"] is not None, r["B"] or 0, r["b"] or 0))
    return BenchResult(cfg, rows)


@dataclass
class ScalingReport:
    backend: str
    p: int
    ns: list
    iter_seconds: list
    init_seconds: list
    iter_slope: float
    init_slope: float

    def to_dict(self) -> dict:
        return asdict(self)


def _median_time(fn, runs: int, min_seconds: float = 2e-2) -> float:
    fn()  # warm-up
    reps = 1
    while True:
        start = time.perf_counter()
        for _ in range(reps):
            fn()
        if time.perf_counter() - start >= min_seconds or reps >= 1 << 16:
            break
        reps *= 2
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        for _ in range(reps):
            fn()
        samples.append((time.perf_counter() - start) / reps)
    return float(np.median(samples))


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def timing_scaling_report(
    p: int,
    ns,
    backend: str = "exact",
    *,
    L: int = 50,
    sketch_len: int | None = None,
    repetitions: int | None = None,
    runs: int = 5,
    seed: int = 0,
) -> ScalingReport:
    """Fit log(time) against log(n) for backend init and for one power step.

    A power step is one batched query advancing ``L`` restarts, as in the
    first phase of the power method.  Each measurement is the median of
    ``runs`` warm runs on a single BLAS thread.  Sketch sizes left as None
    follow the default sizing of :class:`BackendConfig`, so the repetition
    count grows with ``log n`` as it would in practice.
    """
    ns = [int(n) for n in ns]
    if len(set(ns)) < 3:
        raise ValueError("timing_scaling_report needs at least 3 distinct n values")
    iter_t, init_t = [], []
    with threadpool_limits(limits=1):
        for n in ns:
            rng = make_rng(seed, 0x71, n)
            A = DenseTensor(p, n, rng.standard_normal(n**p))
            U = rng.standard_normal((n, L))
            U /= np.linalg.norm(U, axis=0)
            if backend == "exact":
                build = lambda: ExactBackend(A)  # noqa: E731
            elif backend in ("sketch", "sketched"):
                bcfg = BackendConfig(sketch_len=sketch_len, repetitions=repetitions, seed=seed)
                build = lambda: SketchBackend.from_tensor(A, bcfg)  # noqa: E731
            else:
                raise ValueError(f"unknown backend {backend!r}")
            init_t.append(_median_time(build, runs))
            be = build()
            iter_t.append(_median_time(lambda: be.query(U), runs))
    return ScalingReport(
        backend=backend, p=p, ns=ns, iter_seconds=iter_t, init_seconds=init_t,
        iter_slope=loglog_slope(ns, iter_t), init_slope=loglog_slope(ns, init_t),
    )


def guarantee_instance(
    n: int, k: int, p: int, seed: int, *, c0: float = 100.0, c: float = 1.0,
    lam_range=(1.0, 2.0), noise_restarts: int = 10,
):
    """Instance satisfying the recovery-guarantee hypotheses at the epsilon cap.

    Eigenvalues are uniform on ``lam_range``; noise is scaled to an estimated
    spectral norm of ``eps / (c0 sqrt(n))`` with ``eps`` just under the cap.
    Returns ``(A, truth, epsilon)``.
    """
    lam = make_rng(seed, 0x7E).uniform(*lam_range, size=k)
    truth = random_spectrum(lam, n, seed)
    eps = (1.0 - 1e-6) * epsilon_cap(float(lam.min()), p, k, n, c0, c)
    noise = gaussian_noise_tensor(n, p, NoiseSpec(noise_budget(eps, c0, n), noise_restarts, seed))
    return synth_orthogonal(truth, p) + noise, truth, eps

