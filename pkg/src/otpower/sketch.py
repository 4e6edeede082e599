"""Contraction-query backends for the power method.

Both backends view a tensor ``A`` of order ``p`` as ``n`` mode-1 slices
``A_i`` of order ``p - 1`` and answer

* ``query(u)``        ->  ``v_i ~ <A_i, u^(p-1)>``
* ``query_value(u)``  ->  ``~ <A, u^p>``
* ``query_res(xs, alpha, u)`` -> ``v_i ~ <A_i - sum_j alpha[i, j] x_j^(p-1), u^(p-1)>``

:class:`ExactBackend` answers with dense contractions.  :class:`SketchBackend`
answers from tensor sketches built once at init: each repetition hashes the
slice entries into ``b`` buckets through ``p - 1`` independent count-sketch
hash/sign pairs, and at query time the sketch of ``u^(p-1)`` is the circular
convolution of the per-factor count sketches of ``u`` (done with an FFT).
Repetitions are combined with the median.

Every query accepts a single vector ``u`` of shape ``(n,)`` or a block of
column vectors of shape ``(n, m)``; blocks are answered column by column in
one vectorized pass.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from ._rng import make_rng
from .errors import DimensionMismatchError, NonUnitQueryWarning
from .tensor import DenseTensor, check_budget, contract_trailing

UNIT_TOL = 1e-9
C_SKETCH_LEN = 4.0
C_REPETITIONS = 2.0
_CHUNK_ELEMENTS = 2**24


@dataclass(frozen=True)
class BackendConfig:
    """Accuracy knobs of the sketched backend.

    ``sketch_len`` (b) and ``repetitions`` (B) default to ``ceil(4 / eps^2)``
    and ``ceil(2 log(n / delta))`` once the dimension is known.
    """

    epsilon: float = 0.1
    delta: float = 0.1
    sketch_len: int | None = None
    repetitions: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.sketch_len is not None and self.sketch_len < 8:
            raise ValueError("sketch_len must be >= 8")
        if self.repetitions is not None and self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def resolve(self, n: int) -> tuple[int, int]:
        """Return ``(b, B)`` for dimension ``n``."""
        b = self.sketch_len
        if b is None:
            b = max(8, math.ceil(C_SKETCH_LEN / self.epsilon**2))
        B = self.repetitions
        if B is None:
            B = max(1, math.ceil(C_REPETITIONS * math.log(n / self.delta)))
        return int(b), int(B)


class ContractionBackend:
    """Shared query plumbing; subclasses provide ``_query`` and ``_query_value``."""

    kind = "abstract"
    order: int
    dim: int
    slice_norms: np.ndarray
    norm: float

    def _prepare(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.ndim not in (1, 2) or u.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"query vector has shape {u.shape}, expected ({self.dim},) or ({self.dim}, m)"
            )
        norms = np.linalg.norm(u, axis=0)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            warnings.warn(
                "query vector was not unit norm and has been normalized",
                NonUnitQueryWarning,
                stacklevel=3,
            )
            if np.any(norms == 0):
                raise ValueError("cannot query with a zero vector")
            u = u / norms
        return u

    def query(self, u) -> np.ndarray:
        return self._query(self._prepare(u))

    def query_value(self, u):
        return self._query_value(self._prepare(u))

    def _correction(self, xs, alpha, u: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.dim)
        alpha = np.asarray(alpha, dtype=np.float64)
        k = xs.shape[0]
        if alpha.shape != (self.dim, k):
            raise DimensionMismatchError(
                f"alpha has shape {alpha.shape}, expected ({self.dim}, {k})"
            )
        return alpha @ (xs @ u) ** (self.order - 1)

    def query_res(self, xs, alpha, u) -> np.ndarray:
        """Query against ``A_i - sum_j alpha[i, j] x_j^(p-1)``.

        The subtracted part is exact: ``sum_j alpha[i, j] <x_j, u>^(p-1)``.
        """
        u = self._prepare(u)
        if xs is None or len(xs) == 0:
            if alpha is not None and np.size(alpha) != 0:
                raise DimensionMismatchError("alpha given without any x vectors")
            return self._query(u)
        return self._query(u) - self._correction(xs, alpha, u)

    def query_value_res(self, xs, alpha, u):
        """``<A - sum_j alpha[:, j] (x) x_j^(p-1), u^p>``."""
        u = self._prepare(u)
        value = self._query_value(u)
        if xs is None or len(xs) == 0:
            return value
        corr = self._correction(xs, alpha, u)
        return value - np.sum(u * corr, axis=0)


class ExactBackend(ContractionBackend):
    """Dense contractions against the mode-1 unfolding."""

    kind = "exact"

    def __init__(self, A: DenseTensor):
        if A.order < 2:
            raise ValueError("backends need order >= 2")
        self.tensor = A
        self.order = A.order
        self.dim = A.dim
        unfolded = A.unfold()
        self.slice_norms = np.linalg.norm(unfolded, axis=1)
        self.norm = float(np.linalg.norm(A.data))

    def _query(self, u):
        return contract_trailing(self.tensor.data, self.dim, u, self.order - 1)

    def _query_value(self, u):
        v = self._query(u)
        if u.ndim == 1:
            return float(u @ v)
        return np.sum(u * v, axis=0)


@dataclass(frozen=True, eq=False)
class SketchState:
    """Everything the sketched backend keeps after init.

    ``slice_sketches`` has shape ``(n, B, b)``; ``full_sketch`` ``(B, b)``.
    Hash arrays have shape ``(B, factors, n)`` with bucket indices in
    ``[0, b)``; sign arrays hold +-1.
    """

    order: int
    dim: int
    sketch_len: int
    repetitions: int
    slice_hashes: np.ndarray
    slice_signs: np.ndarray
    full_hashes: np.ndarray
    full_signs: np.ndarray
    slice_sketches: np.ndarray
    full_sketch: np.ndarray
    slice_norms: np.ndarray
    norm: float

    _MAGIC = b"OTPSKT01"
    _VERSION = 1
    _HEADER = struct.Struct("<8sIIIII")

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(
            self._MAGIC, self._VERSION, self.order, self.dim,
            self.sketch_len, self.repetitions,
        )
        parts = [
            head,
            self.slice_hashes.astype("<i4").tobytes(),
            self.slice_signs.astype("i1").tobytes(),
            self.full_hashes.astype("<i4").tobytes(),
            self.full_signs.astype("i1").tobytes(),
            self.slice_norms.astype("<f8").tobytes(),
            struct.pack("<d", self.norm),
            self.slice_sketches.astype("<f8").tobytes(),
            self.full_sketch.astype("<f8").tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SketchState":
        magic, version, p, n, b, B = cls._HEADER.unpack_from(blob)
        if magic != cls._MAGIC:
            raise ValueError(f"bad sketch-state magic {magic!r}")
        if version != cls._VERSION:
            raise ValueError(f"unsupported sketch-state version {version}")
        q = p - 1
        pos = cls._HEADER.size

        def take(dtype, count, shape):
            nonlocal pos
            width = np.dtype(dtype).itemsize * count
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
            pos += width
            return arr.reshape(shape).astype(np.dtype(dtype).newbyteorder("="))

        slice_hashes = take("<i4", B * q * n, (B, q, n))
        slice_signs = take("i1", B * q * n, (B, q, n))
        full_hashes = take("<i4", B * p * n, (B, p, n))
        full_signs = take("i1", B * p * n, (B, p, n))
        slice_norms = take("<f8", n, (n,))
        (norm,) = struct.unpack_from("<d", blob, pos)
        pos += 8
        slice_sketches = take("<f8", n * B * b, (n, B, b))
        full_sketch = take("<f8", B * b, (B, b))
        if pos != len(blob):
            raise ValueError("trailing bytes after sketch state")
        return cls(p, n, b, B, slice_hashes, slice_signs, full_hashes, full_signs,
                   slice_sketches, full_sketch, slice_norms, float(norm))


def _draw_hashes(n: int, factors: int, b: int, B: int, seed: int, tag: int):
    # one counter-based stream per hash family; repetition r reads block r
    rng = make_rng(seed, tag)
    hashes = rng.integers(0, b, size=(B, factors, n))
    signs = 2 * rng.integers(0, 2, size=(B, factors, n), dtype=np.int8) - 1
    return hashes, signs


def _combined(hashes: np.ndarray, signs: np.ndarray, b: int):
    """Bucket and sign of every multi-index, row-major, for a block of repetitions."""
    H = hashes[:, 0, :]
    S = signs[:, 0, :].astype(np.float64)
    for m in range(1, hashes.shape[1]):
        R = H.shape[0]
        H = (H[:, :, None] + hashes[:, m, None, :]).reshape(R, -1) % b
        S = (S[:, :, None] * signs[:, m, None, :]).reshape(R, -1)
    return H, S


def _chunks(B: int, width: int):
    step = max(1, _CHUNK_ELEMENTS // max(width, 1))
    for start in range(0, B, step):
        yield start, min(B, start + step)


def init(A: DenseTensor, cfg: BackendConfig, max_elements: int | None = None) -> SketchState:
    """Sketch every mode-1 slice of ``A`` and ``A`` itself.

    Cost is ``O(B n^p)``: each tensor entry is routed once per repetition.
    """
    if A.order < 2:
        raise ValueError("sketching needs order >= 2")
    p, n = A.order, A.dim
    check_budget(n, p, max_elements)
    b, B = cfg.resolve(n)
    q = p - 1
    slice_hashes, slice_signs = _draw_hashes(n, q, b, B, cfg.seed, 0x51)
    full_hashes, full_signs = _draw_hashes(n, p, b, B, cfg.seed, 0xF1)

    unfolded = A.unfold()
    width = n**q
    slice_sketches = np.empty((n, B, b))
    for lo, hi in _chunks(B, n * width):
        H, S = _combined(slice_hashes[lo:hi], slice_signs[lo:hi], b)
        R = hi - lo
        # one entry per repetition in every row, so the CSR layout is direct
        cols = (H + (np.arange(R) * b)[:, None]).T.reshape(-1)
        route = sp.csr_matrix(
            (S.T.reshape(-1), cols, np.arange(0, width * R + 1, R)), shape=(width, R * b)
        )
        slice_sketches[:, lo:hi, :] = np.asarray(
            (route.T @ unfolded.T).T
        ).reshape(n, R, b)

    full_sketch = np.empty((B, b))
    for lo, hi in _chunks(B, n**p):
        H, S = _combined(full_hashes[lo:hi], full_signs[lo:hi], b)
        R = hi - lo
        flat = (H + (np.arange(R) * b)[:, None]).reshape(-1)
        full_sketch[lo:hi] = np.bincount(
            flat, weights=(S * A.data[None, :]).reshape(-1), minlength=R * b
        ).reshape(R, b)

    return SketchState(
        order=p,
        dim=n,
        sketch_len=b,
        repetitions=B,
        slice_hashes=slice_hashes.astype(np.int32),
        slice_signs=slice_signs,
        full_hashes=full_hashes.astype(np.int32),
        full_signs=full_signs,
        slice_sketches=slice_sketches,
        full_sketch=full_sketch,
        slice_norms=np.linalg.norm(unfolded, axis=1),
        norm=float(np.linalg.norm(A.data)),
    )


def _count_sketch_operator(hashes: np.ndarray, signs: np.ndarray, b: int):
    """Sparse ``(B * factors * b, n)`` operator stacking every count sketch."""
    B, factors, n = hashes.shape
    block = (np.arange(B * factors) * b).reshape(B, factors, 1)
    # every column holds one entry per (repetition, factor) block
    rows = (hashes + block).reshape(-1, n).T.reshape(-1)
    data = signs.reshape(-1, n).T.reshape(-1).astype(np.float64)
    nnz = B * factors
    return sp.csc_matrix(
        (data, rows, np.arange(0, n * nnz + 1, nnz)), shape=(B * factors * b, n)
    )


class SketchBackend(ContractionBackend):
    """Tensor-sketch backend; answers queries from a :class:`SketchState`."""

    kind = "sketch"

    def __init__(self, state: SketchState, config: BackendConfig | None = None):
        self.state = state
        self.config = config
        self.order = state.order
        self.dim = state.dim
        self.slice_norms = state.slice_norms
        self.norm = state.norm
        self._b = state.sketch_len
        self._B = state.repetitions
        self._slice_op = _count_sketch_operator(state.slice_hashes, state.slice_signs, self._b)
        self._full_op = _count_sketch_operator(state.full_hashes, state.full_signs, self._b)
        # Inner products with a circular convolution are evaluated in the
        # frequency domain; these are the weighted conjugate half-spectra.
        self._slice_spec = _dual_spectrum(state.slice_sketches.transpose(1, 0, 2))
        self._full_spec = _dual_spectrum(state.full_sketch[:, None, :])[:, 0, :]

    @classmethod
    def from_tensor(cls, A: DenseTensor, cfg: BackendConfig, max_elements: int | None = None):
        return cls(init(A, cfg, max_elements), cfg)

    @property
    def sketch_len(self) -> int:
        return self._b

    @property
    def repetitions(self) -> int:
        return self._B

    def _power_spectrum(self, op, factors: int, U: np.ndarray) -> np.ndarray:
        """Half-spectrum of the sketch of ``u^(factors)``: shape ``(B, b//2+1, m)``."""
        b = self._b
        cs = (op @ U).reshape(self._B, factors, b, -1).transpose(0, 1, 3, 2)
        spec = sfft.rfft(cs, axis=-1)
        prod = spec[:, 0]
        for m in range(1, factors):
            prod = prod * spec[:, m]
        return prod.transpose(0, 2, 1)

    def estimates(self, u) -> np.ndarray:
        """Per-repetition slice estimates, shape ``(B, n)`` or ``(B, n, m)``."""
        u = self._prepare(u)
        return self._estimates(u)

    def _estimates(self, u):
        U = u if u.ndim == 2 else u[:, None]
        ts = self._power_spectrum(self._slice_op, self.order - 1, U)
        est = np.matmul(self._slice_spec, ts).real
        return est if u.ndim == 2 else est[..., 0]

    def _query(self, u):
        return np.median(self._estimates(u), axis=0)

    def _query_value(self, u):
        U = u if u.ndim == 2 else u[:, None]
        ts = self._power_spectrum(self._full_op, self.order, U)
        est = np.einsum("rh,rhm->rm", self._full_spec, ts).real
        value = np.median(est, axis=0)
        return value if u.ndim == 2 else float(value[0])


def _dual_spectrum(sketches: np.ndarray) -> np.ndarray:
    """``w * conj(rfft(s)) / b`` so that ``<s, x> = Re(sum(dual * rfft(x)))``."""
    b = sketches.shape[-1]
    w = np.full(b // 2 + 1, 2.0)
    w[0] = 1.0
    if b % 2 == 0:
        w[-1] = 1.0
    return np.ascontiguousarray(np.conj(sfft.rfft(sketches, axis=-1)) * (w / b))


def make_backend(A: DenseTensor, kind: str = "exact", cfg: BackendConfig | None = None):
    if kind == "exact":
        return ExactBackend(A)
    if kind in ("sketch", "sketched"):
        return SketchBackend.from_tensor(A, cfg or BackendConfig())
    raise ValueError(f"unknown backend {kind!r}")


def within_band(estimate, exact, scale, epsilon: float) -> np.ndarray:
    """True where ``estimate`` lies in the ``(1 +- eps) exact +- scale*eps`` band.

    The band is read symmetrically, ``|estimate - exact| <= eps |exact| + eps scale``,
    so it stays meaningful for negative ``exact``.
    """
    estimate = np.asarray(estimate)
    exact = np.asarray(exact)
    return np.abs(estimate - exact) <= epsilon * np.abs(exact) + epsilon * np.asarray(scale)


@dataclass
class BandTestResult:
    """Empirical failure rate of the query accuracy band over seeded trials.

    ``violations[t, i]`` is True when coordinate ``i`` of trial ``t`` fell
    outside the band.  The test passes when every coordinate's violation
    frequency is at most ``delta`` plus two binomial standard errors.
    """

    epsilon: float
    delta: float
    sketch_len: int
    repetitions: int
    violations: np.ndarray

    @property
    def trials(self) -> int:
        return self.violations.shape[0]

    @property
    def per_coordinate(self) -> np.ndarray:
        return self.violations.mean(axis=0)

    @property
    def pooled(self) -> float:
        return float(self.violations.mean())

    @property
    def threshold(self) -> float:
        return self.delta + 2.0 * math.sqrt(self.delta * (1.0 - self.delta) / self.trials)

    @property
    def passed(self) -> bool:
        return bool(self.per_coordinate.max() <= self.threshold)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "sketch_len": self.sketch_len,
            "repetitions": self.repetitions,
            "max_frequency": float(self.per_coordinate.max()),
            "pooled_frequency": self.pooled,
            "threshold": self.threshold,
            "passed": self.passed,
        }


def band_violation_test(
    A: DenseTensor,
    epsilon: float,
    delta: float,
    trials: int,
    sketch_len: int | None = None,
    repetitions: int | None = None,
    seed: int = 0,
) -> BandTestResult:
    """Check ``query`` against the exact backend with a fresh sketch per trial.

    Each trial draws its own sketch seed and a random unit query vector.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    exact = ExactBackend(A)
    viol = np.zeros((trials, A.dim), dtype=bool)
    b = B = None
    for t in range(trials):
        cfg = BackendConfig(epsilon, delta, sketch_len, repetitions,
                            seed=int(make_rng(seed, 0xA5, t).integers(2**62)))
        backend = SketchBackend.from_tensor(A, cfg)
        b, B = backend.sketch_len, backend.repetitions
        u = make_rng(seed, 0xA7, t).standard_normal(A.dim)
        u /= np.linalg.norm(u)
        viol[t] = ~within_band(backend.query(u), exact.query(u), exact.slice_norms, epsilon)
    return BandTestResult(epsilon, delta, b, B, viol)
