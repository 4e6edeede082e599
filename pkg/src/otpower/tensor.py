"""Dense cubic tensors of arbitrary order and their contractions.

A tensor of order ``p`` and dimension ``n`` is stored as a flat row-major
float64 array of length ``n**p`` (the first index varies slowest).  Every
contraction used by the power method reduces to repeated matrix-vector
products against a reshape of that buffer, contracting trailing modes first.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng
from .errors import BudgetExceededError, DimensionMismatchError

DEFAULT_ELEMENT_BUDGET = 2**31

_element_budget = DEFAULT_ELEMENT_BUDGET


def set_element_budget(limit: int | None) -> int:
    """Set the process-wide element budget; ``None`` restores the default.

    Returns the previous value.
    """
    global _element_budget
    previous = _element_budget
    _element_budget = DEFAULT_ELEMENT_BUDGET if limit is None else int(limit)
    return previous


def get_element_budget() -> int:
    return _element_budget


def check_budget(n: int, p: int, max_elements: int | None = None) -> int:
    """Return ``n**p`` or raise if it exceeds the budget."""
    limit = _element_budget if max_elements is None else int(max_elements)
    size = int(n) ** int(p)
    if size > limit:
        raise BudgetExceededError(size, limit)
    return size


@dataclass(frozen=True)
class DenseTensor:
    """Order-``p`` tensor with every mode of size ``n``.

    ``data`` is copied to a read-only float64 buffer, so instances can be
    shared freely.
    """

    order: int
    dim: int
    data: np.ndarray = field(repr=False)
    symmetric: bool = False

    def __post_init__(self):
        if self.order < 1 or self.dim < 1:
            raise ValueError("order and dim must be positive")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != self.dim**self.order:
            raise ValueError(
                f"data has {data.size} entries, expected {self.dim}**{self.order}"
            )
        if data.flags.writeable:
            data = data.copy()
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array, symmetric: bool = False) -> "DenseTensor":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 0 or len(set(array.shape)) != 1:
            raise ValueError(f"expected a cubic array, got shape {array.shape}")
        return cls(array.ndim, array.shape[0], array, symmetric)

    @classmethod
    def zeros(cls, n: int, p: int) -> "DenseTensor":
        check_budget(n, p)
        return cls(p, n, np.zeros(n**p), symmetric=True)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.dim,) * self.order

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def unfold(self) -> np.ndarray:
        """Mode-1 unfolding: row ``i`` is the flattened slice ``A[i, ...]``."""
        return self.data.reshape(self.dim, -1)

    def is_symmetric(self, atol: float = 0.0) -> bool:
        """Check invariance under every axis permutation (exhaustive)."""
        arr = self.array
        for perm in itertools.permutations(range(self.order)):
            if not np.allclose(arr, arr.transpose(perm), rtol=0.0, atol=atol):
                return False
        return True

    def __add__(self, other: "DenseTensor") -> "DenseTensor":
        return tensor_axpy(1.0, other, self)

    def __mul__(self, scalar: float) -> "DenseTensor":
        return DenseTensor(self.order, self.dim, float(scalar) * self.data, self.symmetric)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Spectrum:
    """Eigenpairs ``(lambda_i, v_i)`` of an orthogonally decomposable tensor.

    Pairs are sorted so that eigenvalues are non-increasing; ``vectors`` holds
    one unit vector per row.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64).reshape(-1)
        vec = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if vec.shape[0] != lam.size:
            raise ValueError(f"{lam.size} eigenvalues but {vec.shape[0]} vectors")
        k, n = vec.shape
        if k > n:
            raise ValueError(f"k={k} components cannot be orthonormal in dimension {n}")
        if np.any(lam <= 0):
            raise ValueError("eigenvalues must be positive")
        norms = np.linalg.norm(vec, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("component vectors must have unit norm")
        gram = vec @ vec.T
        if k > 1 and np.max(np.abs(gram - np.diag(np.diag(gram)))) > 1e-10:
            raise ValueError("component vectors must be mutually orthogonal")
        order = np.argsort(-lam, kind="stable")
        lam = lam[order]
        vec = vec[order]
        lam.flags.writeable = False
        vec.flags.writeable = False
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "vectors", vec)

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class NoiseSpec:
    """Noise generated to a prescribed (estimated) spectral norm."""

    target_spectral_norm: float
    estimator_restarts: int = 10
    seed: int = 0
    estimator_iters: int = 100

    def __post_init__(self):
        if self.target_spectral_norm < 0:
            raise ValueError("target_spectral_norm must be nonnegative")
        if self.estimator_restarts < 1 or self.estimator_iters < 1:
            raise ValueError("estimator_restarts and estimator_iters must be >= 1")


def _as_vector(u, n: int, name: str = "u") -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.shape[0] != n:
        raise DimensionMismatchError(
            f"{name} has shape {u.shape}, expected ({n},)"
        )
    return u


def contract_trailing(data: np.ndarray, n: int, U: np.ndarray, count: int) -> np.ndarray:
    """Contract the last ``count`` modes of a flat tensor against ``U``.

    ``U`` is either a vector of length ``n`` or an ``(n, m)`` block of ``m``
    vectors; for a block, column ``l`` of the result is the contraction
    against column ``l`` alone.  The result has the leading modes flattened
    first, i.e. shape ``(n**(p-count),)`` or ``(n**(p-count), m)``.
    """
    if count == 0:
        return data if U.ndim == 1 else np.repeat(data[:, None], U.shape[1], axis=1)
    x = data.reshape(-1, n) @ U
    if U.ndim == 1:
        for _ in range(count - 1):
            x = x.reshape(-1, n) @ U
        return x
    m = U.shape[1]
    for _ in range(count - 1):
        x = np.einsum("anl,nl->al", x.reshape(-1, n, m), U)
    return x


def contract_full(A: DenseTensor, u) -> float:
    """``A(u, ..., u)``: contract every mode against ``u``."""
    u = _as_vector(u, A.dim)
    return float(contract_trailing(A.data, A.dim, u, A.order)[0])


def contract_all_but_one(A: DenseTensor, u) -> np.ndarray:
    """``A(I, u, ..., u)``: the vector with entries ``sum A[i, j2..jp] u_j2 ... u_jp``."""
    if A.order < 2:
        raise ValueError("contract_all_but_one needs order >= 2")
    u = _as_vector(u, A.dim)
    return contract_trailing(A.data, A.dim, u, A.order - 1)


def contract_all_but_two(A: DenseTensor, u) -> np.ndarray:
    """``A(I, I, u, ..., u)`` as an ``n x n`` matrix; for order 2 this is ``A``."""
    if A.order < 2:
        raise ValueError("contract_all_but_two needs order >= 2")
    u = _as_vector(u, A.dim)
    return contract_trailing(A.data, A.dim, u, A.order - 2).reshape(A.dim, A.dim)


def outer_power(v, p: int, max_elements: int | None = None) -> DenseTensor:
    """``v`` tensored with itself ``p`` times."""
    if p < 1:
        raise ValueError("p must be >= 1")
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    check_budget(v.size, p, max_elements)
    out = v
    for _ in range(p - 1):
        out = np.multiply.outer(out, v).reshape(-1)
    return DenseTensor(p, v.size, out, symmetric=True)


def synth_orthogonal(spec: Spectrum, p: int, max_elements: int | None = None) -> DenseTensor:
    """Materialize ``sum_i lambda_i v_i^{(x)p}``."""
    n = spec.dim
    check_budget(n, p, max_elements)
    data = np.zeros(n**p)
    for lam, v in zip(spec.eigenvalues, spec.vectors):
        data += lam * outer_power(v, p, max_elements).data
    return DenseTensor(p, n, data, symmetric=True)


def frobenius_norm(A: DenseTensor) -> float:
    return float(np.linalg.norm(A.data))


def tensor_axpy(alpha: float, A: DenseTensor, B: DenseTensor) -> DenseTensor:
    """Return ``alpha * A + B``."""
    if A.order != B.order or A.dim != B.dim:
        raise DimensionMismatchError(
            f"cannot combine order-{A.order} dim-{A.dim} with order-{B.order} dim-{B.dim}"
        )
    return DenseTensor(
        A.order, A.dim, alpha * A.data + B.data, A.symmetric and B.symmetric
    )


def random_orthonormal_basis(n: int, k: int, seed: int) -> np.ndarray:
    """``k`` orthonormal vectors in R^n (rows), from a seeded Gaussian draw."""
    if k > n:
        raise ValueError(f"cannot draw {k} orthonormal vectors in dimension {n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    g = make_rng(seed, 0x0B).standard_normal((n, k))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    # a second pass tightens orthonormality to ~1e-15
    q2, r2 = np.linalg.qr(q)
    q2 = q2 * np.sign(np.diag(r2))
    return np.ascontiguousarray(q2.T)


def random_spectrum(eigenvalues, n: int, seed: int) -> Spectrum:
    lam = np.asarray(eigenvalues, dtype=np.float64)
    return Spectrum(lam, random_orthonormal_basis(n, lam.size, seed))


def symmetrize(array: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Average ``array`` over axis permutations.

    Orders up to 4 use all ``p!`` permutations and come out exactly
    symmetric.  Higher orders average over ``p`` random permutations drawn
    from ``rng``, which is only approximately symmetric.
    """
    p = array.ndim
    if p <= 4:
        perms = list(itertools.permutations(range(p)))
    else:
        if rng is None:
            raise ValueError("order >= 5 symmetrization needs a generator")
        perms = [tuple(rng.permutation(p)) for _ in range(p)]
    out = np.zeros_like(array)
    for perm in perms:
        out += array.transpose(perm)
    return out / len(perms)


def symmetric_gaussian_tensor(
    n: int, p: int, sigma: float, seed: int, max_elements: int | None = None
) -> DenseTensor:
    """I.i.d. ``N(0, sigma^2)`` entries, then symmetrized."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    check_budget(n, p, max_elements)
    rng = make_rng(seed, 0x4E)
    g = sigma * rng.standard_normal((n,) * p)
    sym = symmetrize(g, rng)
    return DenseTensor(p, n, sym, symmetric=p <= 4)


def spectral_norm_estimate(
    A: DenseTensor, restarts: int = 10, iters: int = 100, seed: int = 0
) -> float:
    """Lower-bound estimate of ``max_{|x|=1} |A(x, ..., x)|``.

    Runs a shifted symmetric power iteration from ``restarts`` Gaussian
    starts.  At each step the shift is just large enough to make the local
    Hessian of ``A(x, ..., x)`` positive semidefinite, which keeps the
    iteration monotone and convergent to a local maximizer.  Even orders are
    run on ``A`` and ``-A`` since ``|A(x..x)|`` is not odd there.  The result
    is the largest ``|A(x..x)|`` seen, so it never exceeds the true norm and
    cannot decrease when ``restarts`` grows with a fixed seed.
    """
    if restarts < 1 or iters < 1:
        raise ValueError("restarts and iters must be >= 1")
    n, p = A.dim, A.order
    scale = frobenius_norm(A)
    if scale == 0.0:
        return 0.0
    if p == 1:
        return scale
    starts = make_rng(seed, 0x53).standard_normal((restarts, n))
    starts /= np.linalg.norm(starts, axis=1, keepdims=True)
    signs = (1.0,) if p % 2 else (1.0, -1.0)
    tau = 1e-9 * scale
    best = 0.0
    for x0 in starts:
        for sign in signs:
            x = x0.copy()
            for _ in range(iters):
                g = sign * contract_trailing(A.data, n, x, p - 1)
                best = max(best, abs(float(x @ g)))
                if p > 2:
                    hess = sign * contract_trailing(A.data, n, x, p - 2).reshape(n, n)
                    low = np.linalg.eigvalsh(0.5 * (hess + hess.T))[0]
                    shift = max(0.0, -(p - 1) * low) + tau
                else:
                    shift = tau
                y = g + shift * x
                norm = np.linalg.norm(y)
                if norm == 0.0:
                    break
                y /= norm
                done = np.linalg.norm(y - x) < 1e-13
                x = y
                if done:
                    break
            g = sign * contract_trailing(A.data, n, x, p - 1)
            best = max(best, abs(float(x @ g)))
    return best


def gaussian_noise_tensor(
    n: int, p: int, spec: NoiseSpec, max_elements: int | None = None
) -> DenseTensor:
    """Symmetric Gaussian noise rescaled to an estimated spectral norm.

    The estimator is positively homogeneous and deterministic per seed, so
    re-estimating the result with the same settings reproduces the target.
    """
    check_budget(n, p, max_elements)
    if spec.target_spectral_norm == 0.0:
        return DenseTensor.zeros(n, p)
    raw = symmetric_gaussian_tensor(n, p, 1.0, spec.seed, max_elements)
    est = spectral_norm_estimate(
        raw, spec.estimator_restarts, spec.estimator_iters, spec.seed
    )
    return raw * (spec.target_spectral_norm / est)

