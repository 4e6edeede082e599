"""Robust tensor power method with implicit deflation.

``extract_top`` runs ``L`` Gaussian restarts for ``T`` power steps each,
keeps the restart with the largest value ``A(u, ..., u)``, refines it for
another ``T`` steps and reads off the eigenvalue.  ``decompose`` repeats this
``k`` times, each time querying the residual ``A - sum_j lam_j v_j^(p)``
through ``query_res`` so the deflated tensor is never formed.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng
from .errors import (
    DegenerateUpdateError,
    ExtractionError,
    HypothesisError,
    RankMismatchError,
)
from .sketch import BackendConfig, ContractionBackend, make_backend
from .tensor import DenseTensor, Spectrum

DEGENERATE_NORM = 1e-14
MAX_RETRIES = 3
BENCHMARK_T = 30
BENCHMARK_L = 50


# ---------------------------------------------------------------------------
# angles and small scalar facts


@dataclass(frozen=True)
class AngleStats:
    cos: float
    sin: float
    tan: float


def angle_stats(u, v) -> AngleStats:
    """cos, sin and tan of the angle between unit vectors ``u`` and ``v``.

    ``tan`` is ``+inf`` when the vectors are orthogonal.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for name, x in (("u", u), ("v", v)):
        if abs(np.linalg.norm(x) - 1.0) > 1e-9:
            raise ValueError(f"{name} must be a unit vector")
    cos = float(u @ v)
    sin = math.sqrt(min(1.0, max(0.0, 1.0 - cos * cos)))
    tan = math.inf if cos == 0.0 else sin / cos
    return AngleStats(cos, sin, tan)


def tan_from_cos(cos):
    """Vectorized ``tan`` of the angle with cosine ``|cos|``; ``inf`` at 0."""
    c = np.abs(np.asarray(cos, dtype=np.float64))
    s = np.sqrt(np.clip(1.0 - c * c, 0.0, 1.0))
    with np.errstate(divide="ignore"):
        return np.where(c > 0, s / np.where(c > 0, c, 1.0), np.inf)


def power_gap(x: float, p: int) -> tuple[float, float]:
    """``(|1 - (1-x)^p|, p*x)``; for ``x`` in (0, 1) the first is at most the second."""
    return abs(1.0 - (1.0 - x) ** p), p * x


# ---------------------------------------------------------------------------
# hypothesis arithmetic


def epsilon_cap(lam_min: float, p: int, k: int, n: int, c0: float, c: float = 1.0) -> float:
    """Largest admissible accuracy target (exclusive) for the recovery guarantee."""
    return c * lam_min / (c0 * p**2 * k * n ** ((p - 2) / 2))


def noise_budget(epsilon: float, c0: float, n: int) -> float:
    """Spectral-norm budget ``eps / (c0 sqrt(n))`` the noise must respect."""
    return epsilon / (c0 * math.sqrt(n))


def guarantee_iterations(lam1: float, n: int, epsilon: float) -> int:
    return max(1, math.ceil(10.0 * math.log(max(lam1 * n / epsilon, math.e))))


def guarantee_restarts(k: int) -> int:
    return max(1, math.ceil(10.0 * k * math.log(max(k, 2))))


def alignment_threshold(c0: float, p: int, k: int) -> float:
    """An iterate counts as not yet aligned while ``|<v_1, u_t>|`` stays at or below this."""
    return 1.0 - 1.0 / (c0**2 * p**2 * k**2)


# ---------------------------------------------------------------------------
# initialization


def init_candidates(n: int, L: int, seed: int) -> np.ndarray:
    """``L`` independent normalized Gaussian vectors, one per row."""
    if L < 1:
        raise ValueError("L must be >= 1")
    g = make_rng(seed, 0x1C).standard_normal((L, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def check_init_separation(u, spec: Spectrum, t: int) -> bool:
    """Whether ``u`` is well separated toward component ``t`` (0-based).

    True iff ``max_{j != t} |v_j . u| <= |v_t . u| / 4`` and
    ``|v_t . u| >= 1 / sqrt(n)``.
    """
    if not 0 <= t < spec.k:
        raise IndexError(f"component index {t} out of range for k={spec.k}")
    overlaps = np.abs(spec.vectors @ np.asarray(u, dtype=np.float64))
    target = overlaps[t]
    others = np.delete(overlaps, t)
    return bool(
        (others.size == 0 or others.max() <= 0.25 * target)
        and target >= 1.0 / math.sqrt(spec.dim)
    )


# ---------------------------------------------------------------------------
# deflation and power steps


@dataclass(frozen=True)
class Deflation:
    """Rank-one terms already extracted, in ``query_res`` form.

    The subtracted slice term is ``alpha[i, j] x_j^(p-1)`` with
    ``x_j = v_j`` and ``alpha[:, j] = lam_j v_j``.
    """

    xs: np.ndarray
    alpha: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "Deflation":
        return cls(np.zeros((0, n)), np.zeros((n, 0)))

    @classmethod
    def from_pairs(cls, eigenvalues, vectors) -> "Deflation":
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        lam = np.asarray(eigenvalues, dtype=np.float64).reshape(-1)
        return cls(vectors.copy(), (vectors * lam[:, None]).T.copy())

    def __len__(self):
        return self.xs.shape[0]


def _query(backend: ContractionBackend, deflation: Deflation | None, U):
    if deflation is None or len(deflation) == 0:
        return backend.query(U)
    return backend.query_res(deflation.xs, deflation.alpha, U)


def _value(backend: ContractionBackend, deflation: Deflation | None, U):
    if deflation is None or len(deflation) == 0:
        return backend.query_value(U)
    return backend.query_value_res(deflation.xs, deflation.alpha, U)


def power_step(backend: ContractionBackend, deflation: Deflation | None, u) -> np.ndarray:
    """One normalized contraction ``u <- A(I, u, ..., u) / |A(I, u, ..., u)|``."""
    w = _query(backend, deflation, u)
    norm = np.linalg.norm(w)
    if norm < DEGENERATE_NORM:
        raise DegenerateUpdateError(f"contraction norm {norm:.3e} below {DEGENERATE_NORM}")
    return w / norm


@dataclass
class IterationTrace:
    """Per-iteration record of one power-iteration run.

    Row ``t`` describes the step from ``u_t`` to ``u_{t+1}``.  Overlaps with
    the reference vectors (true components, when known) are stored for both
    ends of the step; ``target`` is the reference the run converged toward.
    """

    phase: np.ndarray
    t: np.ndarray
    rayleigh: np.ndarray
    step_norm: np.ndarray
    overlaps_in: np.ndarray | None = None
    overlaps_out: np.ndarray | None = None
    target: int | None = None
    c0: float = 100.0
    p: int = 3
    k: int = 1

    def __len__(self):
        return self.t.size

    @property
    def tan_in(self):
        if self.overlaps_in is None:
            return None
        return tan_from_cos(self.overlaps_in[:, self.target])

    @property
    def tan_out(self):
        if self.overlaps_out is None:
            return None
        return tan_from_cos(self.overlaps_out[:, self.target])

    @property
    def pre_alignment(self):
        """Whether each step starts before close alignment (needs reference vectors)."""
        if self.overlaps_in is None:
            return None
        return np.abs(self.overlaps_in[:, self.target]) <= alignment_threshold(self.c0, self.p, self.k)

    def to_dict(self) -> dict:
        out = {
            "phase": self.phase.tolist(),
            "t": self.t.tolist(),
            "rayleigh": self.rayleigh.tolist(),
            "step_norm": self.step_norm.tolist(),
        }
        if self.overlaps_in is not None:
            out["target"] = int(self.target)
            out["tan_theta"] = [float(x) if np.isfinite(x) else None for x in self.tan_in]
            out["pre_alignment"] = [bool(x) for x in self.pre_alignment]
        return out

    @classmethod
    def concat(cls, parts: list["IterationTrace"]) -> "IterationTrace":
        first = parts[0]
        has_ref = first.overlaps_in is not None
        return cls(
            phase=np.concatenate([q.phase for q in parts]),
            t=np.concatenate([q.t for q in parts]),
            rayleigh=np.concatenate([q.rayleigh for q in parts]),
            step_norm=np.concatenate([q.step_norm for q in parts]),
            overlaps_in=np.concatenate([q.overlaps_in for q in parts]) if has_ref else None,
            overlaps_out=np.concatenate([q.overlaps_out for q in parts]) if has_ref else None,
            target=first.target,
            c0=first.c0,
            p=first.p,
            k=first.k,
        )


def run_iterations(
    backend: ContractionBackend,
    deflation: Deflation | None,
    U0,
    T: int,
    *,
    seed: int = 0,
    reference=None,
    phase: int = 1,
    c0: float = 100.0,
    k: int | None = None,
):
    """Run ``T`` batched power steps on the columns of ``U0`` (shape ``(n, m)``).

    Returns ``(U, traces, alive)``: final iterates, one trace per column and a
    mask of columns that did not exhaust their degenerate-update retries.  A
    column whose contraction collapses is restarted from a fresh Gaussian
    vector drawn from a stream derived from ``seed``.
    """
    U = np.array(U0, dtype=np.float64, copy=True)
    if U.ndim == 1:
        U = U[:, None]
    n, m = U.shape
    ref = None if reference is None else np.atleast_2d(np.asarray(reference, dtype=np.float64))
    rayleigh = np.empty((T, m))
    step = np.empty((T, m))
    ov_in = ov_out = None
    if ref is not None:
        ov_in = np.empty((T, m, ref.shape[0]))
        ov_out = np.empty((T, m, ref.shape[0]))
    retries = np.zeros(m, dtype=int)
    alive = np.ones(m, dtype=bool)
    for t in range(T):
        W = _query(backend, deflation, U)
        rayleigh[t] = np.sum(U * W, axis=0)
        norms = np.linalg.norm(W, axis=0)
        bad = norms < DEGENERATE_NORM
        for col in np.flatnonzero(bad & alive):
            retries[col] += 1
            if retries[col] > MAX_RETRIES:
                alive[col] = False
                continue
            fresh = make_rng(seed, 0xDE, col, retries[col]).standard_normal(n)
            W[:, col] = fresh
            norms[col] = np.linalg.norm(fresh)
        norms[~alive] = 1.0
        V = W / norms
        V[:, ~alive] = U[:, ~alive]
        step[t] = np.linalg.norm(V - U, axis=0)
        if ref is not None:
            ov_in[t] = (ref @ U).T
            ov_out[t] = (ref @ V).T
        U = V
    p = backend.order
    kk = k if k is not None else (1 if ref is None else ref.shape[0])
    traces = []
    for col in range(m):
        tr = IterationTrace(
            phase=np.full(T, phase),
            t=np.arange(T),
            rayleigh=rayleigh[:, col].copy(),
            step_norm=step[:, col].copy(),
            c0=c0,
            p=p,
            k=kk,
        )
        if ref is not None:
            tr.overlaps_in = ov_in[:, col, :].copy()
            tr.overlaps_out = ov_out[:, col, :].copy()
            final = np.abs(ref @ U[:, col])
            tr.target = int(np.argmax(final))
        traces.append(tr)
    return U, traces, alive


@dataclass
class TopPair:
    value: float
    vector: np.ndarray
    trace: IterationTrace
    restart: int
    candidate_values: np.ndarray = field(repr=False, default=None)


def extract_top(
    backend: ContractionBackend,
    deflation: Deflation | None = None,
    T: int = BENCHMARK_T,
    L: int = BENCHMARK_L,
    seed: int = 0,
    *,
    reference=None,
    c0: float = 100.0,
    k: int | None = None,
) -> TopPair:
    """Best of ``L`` restarts after ``T`` steps, refined for ``T`` more steps.

    Ties in the restart values go to the lowest restart index.  For odd
    orders a negative final value is made positive by flipping the vector.
    """
    if T < 1 or L < 1:
        raise ValueError("T and L must be >= 1")
    n = backend.dim
    U0 = init_candidates(n, L, seed).T
    U, traces, alive = run_iterations(
        backend, deflation, U0, T, seed=seed, reference=reference, phase=1, c0=c0, k=k
    )
    if not alive.any():
        raise ExtractionError(f"all {L} restarts hit degenerate updates")
    values = np.asarray(_value(backend, deflation, U), dtype=np.float64)
    values = np.where(alive, values, -np.inf)
    best = int(np.argmax(values))
    u, refine, alive2 = run_iterations(
        backend, deflation, U[:, best], T,
        seed=seed + 1, reference=reference, phase=2, c0=c0, k=k,
    )
    if not alive2[0]:
        raise ExtractionError("refinement of the best restart hit degenerate updates")
    u = u[:, 0]
    value = float(_value(backend, deflation, u))
    if backend.order % 2 == 1 and value < 0:
        value, u = -value, -u
    trace = IterationTrace.concat([traces[best], refine[0]])
    if reference is not None:
        trace.target = refine[0].target
    return TopPair(value, u, trace, best, values)


# ---------------------------------------------------------------------------
# full decomposition


@dataclass(frozen=True)
class PowerMethodConfig:
    """Knobs of the power method and of its recovery guarantee.

    ``T`` and ``L`` left as ``None`` are derived: in guarantee mode from the
    guarantee formulas, otherwise the fixed benchmark choice T=30, L=50.
    """

    k: int
    T: int | None = None
    L: int | None = None
    epsilon: float = 1e-3
    c0: float = 100.0
    c: float = 1.0
    seed: int = 0
    backend: str = "exact"
    backend_config: BackendConfig | None = None
    guarantee_mode: bool = False
    lambda_min: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.T is not None and self.T < 1:
            raise ValueError("T must be >= 1")
        if self.L is not None and self.L < 1:
            raise ValueError("L must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def check_hypotheses(self, p: int, n: int, lam_min: float | None = None) -> None:
        """Raise :class:`HypothesisError` if the guarantee does not apply."""
        if p < 3:
            raise HypothesisError(f"order p={p}: the recovery guarantee needs p >= 3")
        if self.k > n:
            raise HypothesisError(f"k={self.k} exceeds the dimension n={n}")
        if self.c0 < 100:
            raise HypothesisError(f"c0={self.c0}: the recovery guarantee needs c0 >= 100")
        if self.c <= 0:
            raise HypothesisError("c must be positive")
        lam = self.lambda_min if lam_min is None else lam_min
        if lam is not None:
            cap = epsilon_cap(lam, p, self.k, n, self.c0, self.c)
            if not self.epsilon < cap:
                raise HypothesisError(
                    f"epsilon={self.epsilon:.3e} is outside (0, {cap:.3e}) for "
                    f"lambda_min={lam:.3e}"
                )


@dataclass
class Decomposition:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    traces: list
    T: int
    L: int
    config: PowerMethodConfig

    @property
    def k(self) -> int:
        return self.eigenvalues.size


def _top_value_prepass(backend, seed: int, count: int = 8, steps: int = 5) -> float:
    U0 = init_candidates(backend.dim, count, make_rng(seed, 0x99).integers(2**31)).T
    U, _, alive = run_iterations(backend, None, U0, steps, seed=seed)
    vals = np.abs(np.asarray(backend.query_value(U)))
    return float(np.max(vals[alive])) if alive.any() else 1.0


def resolve_schedule(cfg: PowerMethodConfig, backend: ContractionBackend) -> tuple[int, int]:
    T, L = cfg.T, cfg.L
    if cfg.guarantee_mode:
        if T is None:
            T = guarantee_iterations(_top_value_prepass(backend, cfg.seed), backend.dim, cfg.epsilon)
        if L is None:
            L = guarantee_restarts(cfg.k)
    return (T or BENCHMARK_T), (L or BENCHMARK_L)


def decompose(A, cfg: PowerMethodConfig, *, truth: Spectrum | None = None) -> Decomposition:
    """Extract ``cfg.k`` eigenpairs one at a time with implicit deflation.

    ``A`` is a :class:`DenseTensor` or an already initialized backend.  With
    ``truth`` given, traces record overlaps with the true components.
    """
    if isinstance(A, ContractionBackend):
        backend = A
    elif isinstance(A, DenseTensor):
        backend = make_backend(A, cfg.backend, cfg.backend_config)
    else:
        raise TypeError("decompose needs a DenseTensor or a ContractionBackend")
    p, n = backend.order, backend.dim
    if cfg.k > n:
        raise ValueError(f"k={cfg.k} exceeds the dimension n={n}")
    if cfg.guarantee_mode:
        cfg.check_hypotheses(p, n)
    T, L = resolve_schedule(cfg, backend)
    reference = None if truth is None else truth.vectors
    lams, vecs, traces = [], [], []
    for s in range(cfg.k):
        deflation = Deflation.from_pairs(lams, vecs) if lams else None
        top = extract_top(
            backend, deflation, T, L, seed=int(make_rng(cfg.seed, 0x7C, s).integers(2**62)),
            reference=reference, c0=cfg.c0, k=cfg.k,
        )
        lams.append(top.value)
        vecs.append(top.vector)
        traces.append(top.trace)
    result = Decomposition(np.array(lams), np.array(vecs), traces, T, L, cfg)
    if cfg.guarantee_mode and cfg.lambda_min is None:
        # a posteriori: the admissible range depends on the smallest eigenvalue
        cfg.check_hypotheses(p, n, lam_min=float(np.min(result.eigenvalues)))
    return result


# ---------------------------------------------------------------------------
# verification


@dataclass
class RecoveryReport:
    """Outcome of matching estimates against the true spectrum.

    ``permutation[i]`` is the estimate matched to true pair ``i``; errors and
    verdicts are indexed by true pair.  ``verdicts[:, 0..2]`` are the value,
    vector and cross-talk conditions of epsilon-closeness; ``guarantee_pairs``
    is value error <= eps and vector error <= eps / lambda_i.
    """

    epsilon: float
    permutation: tuple
    signs: np.ndarray
    value_errors: np.ndarray
    vector_errors: np.ndarray
    cross_talk: np.ndarray
    verdicts: np.ndarray
    guarantee_pairs: np.ndarray
    matched_values: np.ndarray
    matched_vectors: np.ndarray
    traces: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def epsilon_close(self) -> bool:
        return bool(self.verdicts.all())

    @property
    def guarantee(self) -> bool:
        return bool(self.guarantee_pairs.all())

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "permutation": list(self.permutation),
            "signs": self.signs.astype(int).tolist(),
            "value_errors": self.value_errors.tolist(),
            "vector_errors": self.vector_errors.tolist(),
            "cross_talk": self.cross_talk.tolist(),
            "verdicts": self.verdicts.tolist(),
            "guarantee_pairs": self.guarantee_pairs.tolist(),
            "epsilon_close": self.epsilon_close,
            "guarantee": self.guarantee,
        }


def _greedy_matching(overlap: np.ndarray) -> tuple:
    k = overlap.shape[0]
    perm = [-1] * k
    used_rows, used_cols = set(), set()
    order = np.argsort(-overlap, axis=None, kind="stable")
    for flat in order:
        i, j = divmod(int(flat), k)
        if i in used_rows or j in used_cols:
            continue
        perm[i] = j
        used_rows.add(i)
        used_cols.add(j)
        if len(used_rows) == k:
            break
    return tuple(perm)


def _evaluate(truth: Spectrum, lam_hat, vec_hat, perm, epsilon: float, p: int):
    k, n = truth.k, truth.dim
    lam, V = truth.eigenvalues, truth.vectors
    signs = np.ones(k)
    m_vals = np.empty(k)
    m_vecs = np.empty((k, n))
    for i, j in enumerate(perm):
        s = 1.0 if V[i] @ vec_hat[j] >= 0 else -1.0
        signs[i] = s
        m_vecs[i] = s * vec_hat[j]
        m_vals[i] = lam_hat[j] * (s if p % 2 == 1 else 1.0)
    value_err = np.abs(m_vals - lam)
    vector_err = np.linalg.norm(m_vecs - V, axis=1)
    cross = np.zeros(k)
    for i in range(k - 1):
        cross[i] = np.max(np.abs(V[i + 1 :] @ m_vecs[i]))
    verdicts = np.column_stack(
        [
            value_err <= epsilon,
            vector_err <= np.minimum(math.sqrt(2.0), epsilon / lam),
            cross <= epsilon / (math.sqrt(n) * lam),
        ]
    )
    guarantee = (value_err <= epsilon) & (vector_err <= epsilon / lam)
    return signs, m_vals, m_vecs, value_err, vector_err, cross, verdicts, guarantee


def verify_epsilon_close(
    truth: Spectrum, eigenvalues, vectors, epsilon: float, p: int
) -> RecoveryReport:
    """Match estimates to truth and evaluate epsilon-closeness.

    Matching is greedy on ``|<v_i, v_hat_j>|``; when that matching fails a
    predicate and ``k <= 8`` every permutation is tried and the best one
    (all predicates, then the guarantee, then most passing checks) is kept.
    """
    lam_hat = np.asarray(eigenvalues, dtype=np.float64).reshape(-1)
    vec_hat = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if lam_hat.size != truth.k or vec_hat.shape[0] != truth.k:
        raise RankMismatchError(
            f"truth has k={truth.k} pairs but {lam_hat.size} estimates were given"
        )
    if vec_hat.shape[1] != truth.dim:
        raise RankMismatchError(f"estimate vectors have dimension {vec_hat.shape[1]}")

    def score(res):
        verdicts, guarantee = res[6], res[7]
        return (bool(verdicts.all()), bool(guarantee.all()), int(verdicts.sum() + guarantee.sum()))

    perm = _greedy_matching(np.abs(truth.vectors @ vec_hat.T))
    best = _evaluate(truth, lam_hat, vec_hat, perm, epsilon, p)
    best_score = score(best)
    if not (best_score[0] and best_score[1]) and truth.k <= 8:
        for cand in itertools.permutations(range(truth.k)):
            res = _evaluate(truth, lam_hat, vec_hat, cand, epsilon, p)
            if score(res) > best_score:
                perm, best, best_score = cand, res, score(res)
    signs, m_vals, m_vecs, value_err, vector_err, cross, verdicts, guarantee = best
    return RecoveryReport(
        epsilon=float(epsilon),
        permutation=tuple(int(x) for x in perm),
        signs=signs,
        value_errors=value_err,
        vector_errors=vector_err,
        cross_talk=cross,
        verdicts=verdicts,
        guarantee_pairs=guarantee,
        matched_values=m_vals,
        matched_vectors=m_vecs,
    )


@dataclass
class DeflationDiagnostics:
    """Accumulated deflation error for the first ``r`` pairs at a query point.

    ``error`` is ``sum_{i<r} E_i(I, u, ..., u)`` with
    ``E_i = lam_i v_i^(p) - lam_hat_i v_hat_i^(p)``; ``per_direction[j]`` is
    its component along ``v_j`` for ``j >= r``.
    """

    applicable: bool
    r: int
    deflated_overlap: float = 0.0
    accuracy_term: float = 0.0
    error: np.ndarray | None = None
    error_norm: float = 0.0
    per_direction: np.ndarray | None = None
    bound_norm: float = 0.0
    bound_direction: float = 0.0
    aligned_applicable: bool = False
    aligned_cap: float = math.inf
    aligned_cap_direction: float = math.inf

    @property
    def norm_bound_holds(self) -> bool:
        return self.error_norm <= self.bound_norm * (1 + 1e-12) + 1e-300

    @property
    def direction_bound_holds(self) -> bool:
        if self.per_direction is None or self.per_direction.size == 0:
            return True
        return bool(np.all(np.abs(self.per_direction) <= self.bound_direction * (1 + 1e-12) + 1e-300))

    @property
    def aligned_holds(self) -> bool:
        if not self.aligned_applicable:
            return True
        ok = self.error_norm <= self.aligned_cap
        if self.per_direction is not None and self.per_direction.size:
            ok = ok and bool(np.all(np.abs(self.per_direction) <= self.aligned_cap_direction))
        return ok


def deflation_diagnostics(
    truth: Spectrum,
    eigenvalues,
    vectors,
    u,
    epsilon: float,
    p: int,
    r: int | None = None,
    c0: float | None = None,
) -> DeflationDiagnostics:
    """Deflation error after removing ``r`` estimated pairs, with its bounds.

    Estimates must already be aligned with ``truth`` (pair ``i`` estimates
    true pair ``i``).  If they are not epsilon-close the result is marked not
    applicable.  With ``kap = 2 sum_{i<r} <u, v_i>^2`` (``deflated_overlap``)
    and ``ph = 2k (eps / lam_k)^(p-1)`` (``accuracy_term``) the bounds are
    ``2 p eps sqrt(kap) + 2 ph eps`` on the norm and
    ``(2 kap eps + ph eps) / sqrt(n)`` along each remaining ``v_j``.  With
    ``c0`` given and ``u`` within ``1/(c0^2 p^2 k)`` of ``v_r`` (and
    ``eps <= lam_k / (2 c0 k)``) the caps ``4 eps / c0`` and
    ``4 eps / (c0 sqrt(n))`` are checked as well.
    """
    lam_hat = np.asarray(eigenvalues, dtype=np.float64).reshape(-1)
    vec_hat = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    k, n = truth.k, truth.dim
    r = k if r is None else int(r)
    if lam_hat.size != k or vec_hat.shape[0] != k:
        raise RankMismatchError("estimates must cover every true pair")
    if not 0 <= r <= k:
        raise ValueError(f"r={r} must lie in [0, {k}]")
    closeness = _evaluate(truth, lam_hat, vec_hat, tuple(range(k)), epsilon, p)
    if not closeness[6].all():
        return DeflationDiagnostics(applicable=False, r=r)

    u = np.asarray(u, dtype=np.float64)
    lam, V = truth.eigenvalues, truth.vectors
    c = V[:r] @ u
    c_hat = vec_hat[:r] @ u
    error = (lam[:r] * c ** (p - 1)) @ V[:r] - (lam_hat[:r] * c_hat ** (p - 1)) @ vec_hat[:r]
    deflated_overlap = 2.0 * float(np.sum(c**2))
    accuracy_term = 2.0 * k * (epsilon / lam[-1]) ** (p - 1)
    per_direction = V[r:] @ error
    diag = DeflationDiagnostics(
        applicable=True,
        r=r,
        deflated_overlap=deflated_overlap,
        accuracy_term=accuracy_term,
        error=error,
        error_norm=float(np.linalg.norm(error)),
        per_direction=per_direction,
        bound_norm=2 * p * epsilon * math.sqrt(deflated_overlap) + 2 * accuracy_term * epsilon,
        bound_direction=(2 * deflated_overlap * epsilon + accuracy_term * epsilon) / math.sqrt(n),
    )
    if c0 is not None and r < k:
        close_to_next = abs(float(V[r] @ u)) >= 1.0 - 1.0 / (c0**2 * p**2 * k)
        small_eps = epsilon <= lam[-1] / (2 * c0 * k)
        if close_to_next and small_eps:
            diag.aligned_applicable = True
            diag.aligned_cap = 4 * epsilon / c0
            diag.aligned_cap_direction = 4 * epsilon / (c0 * math.sqrt(n))
    return diag
