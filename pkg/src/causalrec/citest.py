"""Correlation matrices from attention, and partial-correlation CI testing.

The cross-product K = A A^T of an attention matrix is treated as a covariance
over tokens; normalizing it gives the token correlation matrix.  Conditional
independence is then decided with a Fisher-z test on partial correlations
computed from that matrix.  All operations are pure functions of their inputs
and safe for concurrent use on shared read-only matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

# magnitude clamp applied before atanh; duplicate attention rows otherwise
# produce infinite statistics
_RHO_CLAMP = 1.0 - 1e-12

_ROW_SUM_TOL = 1e-6
_SYMMETRY_TOL = 1e-12
_PSD_TOL = -1e-9


class DegenerateMatrixError(ValueError):
    """A matrix is numerically unusable: zero row norm, singular submatrix,
    or a partial correlation outside [-1, 1] beyond tolerance."""


class SampleSizeError(ValueError):
    """Effective sample size too small for the requested conditioning set."""


class AttentionMatrix:
    """Square matrix of token-to-token attention.

    Rows are softmax distributions (non-negative, summing to 1 within 1e-6).
    Factors produced analytically from a covariance matrix are not attention
    probabilities; they set ``row_stochastic=False`` to skip those checks.
    """

    def __init__(self, values, row_stochastic: bool = True):
        v = np.array(values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"attention matrix must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("attention matrix contains non-finite entries")
        if row_stochastic:
            if np.any(v < 0):
                raise ValueError("attention matrix has negative entries")
            row_sums = v.sum(axis=1)
            bad = np.nonzero(np.abs(row_sums - 1.0) > _ROW_SUM_TOL)[0]
            if bad.size:
                raise ValueError(
                    f"attention rows {bad.tolist()} do not sum to 1 (tolerance {_ROW_SUM_TOL})"
                )
        v.setflags(write=False)
        self.values = v
        self.row_stochastic = row_stochastic

    @property
    def size(self) -> int:
        return self.values.shape[0]


class CorrelationMatrix:
    """Symmetric PSD matrix with unit diagonal, plus the effective sample
    size used by the significance test."""

    def __init__(self, values, effective_sample_size: int):
        v = np.array(values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"correlation matrix must be square, got shape {v.shape}")
        if np.abs(v - v.T).max(initial=0.0) > _SYMMETRY_TOL:
            raise ValueError("correlation matrix is not symmetric")
        if np.any(np.abs(np.diag(v) - 1.0) > 0):
            raise ValueError("correlation matrix diagonal must be exactly 1")
        if np.any(np.abs(v) > 1.0):
            raise ValueError("correlation entries must lie in [-1, 1]")
        if v.shape[0] and np.linalg.eigvalsh(v).min() < _PSD_TOL:
            raise ValueError("correlation matrix is not positive semi-definite")
        n = int(effective_sample_size)
        if n < 1:
            raise ValueError(f"effective sample size must be positive, got {n}")
        v.setflags(write=False)
        self.values = v
        self.effective_sample_size = n

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CiDecision:
    independent: bool
    statistic: float
    partial_correlation: float


def aggregate_heads(stack, mode="mean") -> np.ndarray:
    """Aggregate a (heads, L, L) attention stack to a single (L, L) matrix.

    ``mode`` is "mean" (preserves row-stochasticity) or an integer head index.
    """
    a = np.asarray(stack, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"expected (heads, L, L) stack, got shape {a.shape}")
    if mode == "mean":
        return a.mean(axis=0)
    return a[int(mode)]


def correlation_from_attention(
    a: AttentionMatrix, effective_sample_size: int | None = None
) -> CorrelationMatrix:
    """Token correlation matrix from K = A A^T.

    rho(i, j) = K(i, j) / sqrt(K(i, i) K(j, j)).  The effective sample size
    defaults to the token count L, the only sample axis K sums over.
    """
    v = a.values
    k = v @ v.T
    d = np.diag(k)
    bad = np.nonzero(d <= 0.0)[0]
    if bad.size:
        raise DegenerateMatrixError(
            f"attention row {bad[0]} is degenerate (zero norm); "
            "correlation is undefined for it"
        )
    rho = k / np.sqrt(np.outer(d, d))
    rho = (rho + rho.T) / 2.0
    np.clip(rho, -1.0, 1.0, out=rho)
    np.fill_diagonal(rho, 1.0)
    n = a.size if effective_sample_size is None else effective_sample_size
    return CorrelationMatrix(rho, n)


def _validate_indices(size: int, i: int, j: int, z: Sequence[int]) -> tuple[int, ...]:
    zs = tuple(sorted(int(c) for c in z))
    idx = (i, j) + zs
    if len(set(idx)) != len(idx):
        raise ValueError(f"indices must be distinct: i={i}, j={j}, z={zs}")
    if i == j:
        raise ValueError("i and j must differ")
    if any(c < 0 or c >= size for c in idx):
        raise ValueError(f"index out of range for size-{size} matrix: {idx}")
    return zs


def partial_correlation(rho: CorrelationMatrix, i: int, j: int, z: Iterable[int] = ()) -> float:
    """Partial correlation of variables i and j given the set z.

    Computed by inverting the correlation submatrix over {i, j} | z and
    normalizing the off-diagonal precision entry.
    """
    zs = _validate_indices(rho.size, i, j, tuple(z))
    v = rho.values
    if not zs:
        return float(v[i, j])
    idx = np.array((i, j) + zs)
    sub = v[np.ix_(idx, idx)]
    try:
        prec = np.linalg.inv(sub)
    except np.linalg.LinAlgError as e:
        raise DegenerateMatrixError(
            f"singular correlation submatrix for i={i}, j={j}, z={zs}"
        ) from e
    denom = prec[0, 0] * prec[1, 1]
    if denom <= 0.0 or not np.isfinite(denom):
        raise DegenerateMatrixError(
            f"non-positive precision diagonal for i={i}, j={j}, z={zs}"
        )
    r = float(-prec[0, 1] / np.sqrt(denom))
    if abs(r) > 1.0 + 1e-9 or not np.isfinite(r):
        raise DegenerateMatrixError(
            f"partial correlation {r} outside [-1, 1] for i={i}, j={j}, z={zs}"
        )
    return min(1.0, max(-1.0, r))


def ci_test(
    rho: CorrelationMatrix, i: int, j: int, z: Iterable[int], alpha: float
) -> CiDecision:
    """Fisher-z conditional independence test at significance level alpha.

    statistic = sqrt(N - |z| - 3) * |atanh(r)|; the pair is declared
    independent when the statistic does not exceed the two-sided normal
    quantile for alpha.  Deterministic for fixed inputs.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    zs = tuple(z)
    n = rho.effective_sample_size
    df = n - len(zs) - 3
    if df < 1:
        raise SampleSizeError(
            f"effective sample size {n} supports conditioning sets up to "
            f"size {n - 4}; got |z| = {len(zs)} - cap the conditioning-set size"
        )
    r = partial_correlation(rho, i, j, zs)
    r_clamped = min(_RHO_CLAMP, max(-_RHO_CLAMP, r))
    statistic = float(np.sqrt(df) * np.abs(np.arctanh(r_clamped)))
    threshold = float(stats.norm.ppf(1.0 - alpha / 2.0))
    return CiDecision(independent=statistic <= threshold, statistic=statistic, partial_correlation=r)


class PartialCorrelationCiTester:
    """Memoizing CI test bound to one correlation matrix and one alpha.

    Calling the tester returns the independence verdict; ``decision`` returns
    the full record.  The memo is idempotent-fill, so sharing an instance
    across threads behaves as if each test were computed once.
    """

    def __init__(self, rho: CorrelationMatrix, alpha: float):
        self.rho = rho
        self.alpha = alpha
        self._memo: dict[tuple[int, int, tuple[int, ...]], CiDecision] = {}

    @property
    def max_cond_size(self) -> int:
        return self.rho.effective_sample_size - 4

    def decision(self, i: int, j: int, z: Iterable[int] = ()) -> CiDecision:
        a, b = (i, j) if i < j else (j, i)
        key = (a, b, tuple(sorted(z)))
        hit = self._memo.get(key)
        if hit is None:
            hit = ci_test(self.rho, key[0], key[1], key[2], self.alpha)
            self._memo[key] = hit
        return hit

    def __call__(self, i: int, j: int, z: Iterable[int] = ()) -> bool:
        return self.decision(i, j, z).independent

    @property
    def test_count(self) -> int:
        return len(self._memo)
