"""Exact and high-precision reference paths for the allele-count tail sums.

Three representations of the Stirling-number triangle live here:

* an exact big-integer table (:func:`build_table`), the ground truth for
  combinatorial identities;
* the scaled double-precision recurrence (:func:`scaled_rows`), which divides
  row n by n! so magnitudes stay bounded, and doubles as the benchmark
  baseline via :func:`recurrence_tails`;
* a streamed big-integer row combined with high-precision floating-point
  sums (:func:`exact_tails`), the validation oracle for the asymptotic
  estimator.

Because the signed numbers satisfy sign(S_n^k) = (-1)^(n-k), the tail sums
sum_{k} (-1)^(n-k) S_n^k theta^k have strictly positive terms for theta > 0;
the oracle therefore accumulates unsigned magnitudes and is cancellation-free.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence, Union

import gmpy2
import numpy as np
from gmpy2 import mpfr, mpz

from .errors import (
    DegenerateInputError,
    DomainError,
    ResourceError,
    SaturationError,
)
from .special import log_sum_exp

__all__ = [
    "StirlingTable",
    "ScaledStirlingRow",
    "ExactEvaluation",
    "build_table",
    "stirling_row",
    "scaled_rows",
    "exact_tails",
    "exact_fs",
    "recurrence_tails",
    "save_scaled_cache",
    "load_scaled_cache",
    "DEFAULT_TABLE_LIMIT",
    "DEFAULT_PRECISION_BITS",
]

# Largest full big-integer triangle we agree to materialize; beyond this the
# quadratic memory cost (GBs of limbs) is a caller mistake, not a use case.
DEFAULT_TABLE_LIMIT = 2100

DEFAULT_PRECISION_BITS = 256

ThetaLike = Union[str, float, int, mpfr]


@dataclass(frozen=True)
class StirlingTable:
    """Exact signed triangle S_n^(k) for 0 <= k <= n <= n_max."""

    n_max: int
    rows: tuple

    def value(self, n: int, k: int):
        if not 0 <= n <= self.n_max:
            raise DomainError(f"row {n} outside table (n_max={self.n_max})")
        if not 0 <= k <= n:
            raise DomainError(f"column {k} outside row {n}")
        return self.rows[n][k]


@dataclass(frozen=True)
class ScaledStirlingRow:
    """Row n of the triangle scaled by n!, in double precision."""

    n: int
    values: np.ndarray  # signed, length n + 1


@dataclass(frozen=True)
class ExactEvaluation:
    """High-precision tail probabilities for one parameter triple.

    ``s_prime`` is the probability of at least m distinct alleles among n
    sequences at diversity theta, ``t_prime`` its complement (computed from
    its own finite sum, never as 1 - s_prime), and ``fs`` the log-odds
    statistic.  Values are gmpy2.mpfr at ``precision_bits``.
    """

    s_prime: mpfr
    t_prime: mpfr
    fs: mpfr
    precision_bits: int


def _unsigned_rows_upto(n: int) -> list:
    """All unsigned rows |S_j^(k)| for j = 0..n (exact integers)."""
    rows = [[mpz(1)]]
    for j in range(n):
        prev = rows[-1]
        nxt = [mpz(0)] * (j + 2)
        nxt[j + 1] = mpz(1)
        for k in range(1, j + 1):
            nxt[k] = prev[k - 1] + j * prev[k]
        rows.append(nxt)
    return rows


def _sign(n: int, k: int) -> int:
    return -1 if (n - k) & 1 else 1


def build_table(n_max: int, limit: int = DEFAULT_TABLE_LIMIT) -> StirlingTable:
    """Exact signed Stirling triangle up to row n_max.

    Raises ResourceError when n_max exceeds the configured limit; use
    :func:`stirling_row` to stream a single large row instead.
    """
    if n_max < 1:
        raise DomainError(f"n_max must be >= 1, got {n_max}")
    if n_max > limit:
        raise ResourceError(
            f"n_max={n_max} exceeds the table memory budget ({limit}); "
            f"stream rows with stirling_row() instead"
        )
    unsigned = _unsigned_rows_upto(n_max)
    rows = tuple(
        tuple(_sign(n, k) * c for k, c in enumerate(row))
        for n, row in enumerate(unsigned)
    )
    return StirlingTable(n_max=n_max, rows=rows)


def stirling_row(n: int) -> list:
    """Signed row n of the exact triangle, streamed in O(n) memory."""
    if n < 0:
        raise DomainError(f"n must be non-negative, got {n}")
    row = [mpz(1)]
    for j in range(n):
        nxt = [mpz(0)] * (j + 2)
        nxt[j + 1] = mpz(1)
        for k in range(1, j + 1):
            nxt[k] = row[k - 1] + j * row[k]
        row = nxt
    return [_sign(n, k) * c for k, c in enumerate(row)]


def scaled_rows(n: int) -> ScaledStirlingRow:
    """Row n of S_n^(k)/n! by the scaled recurrence, in double precision.

    The scaled recurrence divides through by (n+1) at each step, so all
    entries stay in [-1, 1] and the iteration is overflow-free for any
    practical n.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    vals = np.array([0.0, 1.0])  # row 1: S_1^(0)=0, S_1^(1)=1, scaled by 1!
    for j in range(1, n):
        shifted = np.concatenate(([0.0], vals))
        padded = np.concatenate((vals, [0.0]))
        vals = (shifted - j * padded) / (j + 1.0)
    return ScaledStirlingRow(n=n, values=vals)


_CACHE_MAGIC = b"FUFS1"


def save_scaled_cache(fh: BinaryIO, n_max: int) -> None:
    """Write scaled rows 1..n_max as a binary cache.

    Layout: magic "FUFS1", n_max as 64-bit little-endian, then for each
    n = 1..n_max the n+1 row entries as 64-bit little-endian doubles.
    """
    if n_max < 1:
        raise DomainError(f"n_max must be >= 1, got {n_max}")
    fh.write(_CACHE_MAGIC)
    fh.write(struct.pack("<Q", n_max))
    vals = np.array([0.0, 1.0])
    fh.write(vals.astype("<f8").tobytes())
    for j in range(1, n_max):
        shifted = np.concatenate(([0.0], vals))
        padded = np.concatenate((vals, [0.0]))
        vals = (shifted - j * padded) / (j + 1.0)
        fh.write(vals.astype("<f8").tobytes())


def load_scaled_cache(fh: BinaryIO) -> list[ScaledStirlingRow]:
    """Read a cache written by :func:`save_scaled_cache`."""
    magic = fh.read(5)
    if magic != _CACHE_MAGIC:
        raise DomainError(f"bad cache magic {magic!r}")
    (n_max,) = struct.unpack("<Q", fh.read(8))
    out = []
    for n in range(1, n_max + 1):
        raw = fh.read(8 * (n + 1))
        if len(raw) != 8 * (n + 1):
            raise DomainError(f"cache truncated in row {n}")
        out.append(ScaledStirlingRow(n=n, values=np.frombuffer(raw, dtype="<f8")))
    return out


class _UnsignedRowCache:
    """Grow-only cache of exact unsigned rows, shared by oracle calls.

    Construction is single-writer (module lock-free use is fine under the
    GIL for CPython list append semantics); completed rows are immutable.
    """

    def __init__(self):
        self._rows = [[mpz(1)]]

    def row(self, n: int) -> Sequence:
        while len(self._rows) <= n:
            j = len(self._rows) - 1
            prev = self._rows[-1]
            nxt = [mpz(0)] * (j + 2)
            nxt[j + 1] = mpz(1)
            for k in range(1, j + 1):
                nxt[k] = prev[k - 1] + j * prev[k]
            self._rows.append(nxt)
        return self._rows[n]


_ROW_CACHE = _UnsignedRowCache()
_ROW_CACHE_LIMIT = 600  # rows beyond this are streamed, not retained


def _oracle_row(n: int) -> Sequence:
    if n <= _ROW_CACHE_LIMIT:
        return _ROW_CACHE.row(n)
    row = [mpz(1)]
    for j in range(n):
        nxt = [mpz(0)] * (j + 2)
        nxt[j + 1] = mpz(1)
        for k in range(1, j + 1):
            nxt[k] = row[k - 1] + j * row[k]
        row = nxt
    return row


def _parse_theta(theta: ThetaLike) -> mpfr:
    # decimal text goes straight to the target precision, no double round-trip
    if isinstance(theta, mpfr):
        return +theta
    if isinstance(theta, (int, float)):
        return mpfr(theta)
    return mpfr(str(theta).strip())


def exact_tails(
    n: int,
    m: int,
    theta: ThetaLike,
    precision_bits: int = DEFAULT_PRECISION_BITS,
) -> ExactEvaluation:
    """Both tail sums of the allele-count distribution at high precision.

    The upper tail (at least m alleles) and lower tail (fewer than m) are
    each evaluated from their own positive-term sum, so both are accurate
    to ~2^-precision_bits relative regardless of which one is small.
    theta may be a decimal string, which is parsed directly at the working
    precision.
    """
    if m < 1 or m > n:
        raise DomainError(f"m must satisfy 1 <= m <= n, got m={m}, n={n}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if precision_bits < 8:
        raise DomainError(f"precision_bits too small: {precision_bits}")
    with gmpy2.context(precision=precision_bits):
        th = _parse_theta(theta)
        if not th > 0:
            raise DomainError(f"theta must be positive, got {theta!r}")
        if m == 1:
            # every sample has at least one allele; the lower sum is empty
            return ExactEvaluation(mpfr(1), mpfr(0), mpfr("inf"), precision_bits)
        if m == n:
            # single surviving term: theta^n / rising factorial
            log_s = n * gmpy2.log(th) - (
                gmpy2.lgamma(th + n)[0] - gmpy2.lgamma(th)[0]
            )
            s = gmpy2.exp(log_s)
            t = -gmpy2.expm1(log_s)
            fs = log_s - gmpy2.log(t)
            return ExactEvaluation(s, t, fs, precision_bits)
        row = _oracle_row(n)
        upper = mpfr(0)
        lower = mpfr(0)
        power = mpfr(1)
        for k in range(n + 1):
            term = mpfr(row[k]) * power
            if k >= m:
                upper += term
            else:
                lower += term
            power *= th
        total = upper + lower
        s = upper / total
        t = lower / total
        if t == 0:
            fs = mpfr("inf")
        elif s == 0:
            fs = mpfr("-inf")
        else:
            fs = gmpy2.log(upper) - gmpy2.log(lower)
        return ExactEvaluation(s, t, fs, precision_bits)


def exact_fs(
    n: int,
    m: int,
    theta: ThetaLike,
    precision_bits: int = DEFAULT_PRECISION_BITS,
) -> float:
    """High-precision log-odds statistic, rounded to double.

    m = 1 is degenerate (the upper tail is identically 1).  A tail that
    rounds to 0 or 1 at working precision raises SaturationError with the
    sign of the divergence.
    """
    if m == 1:
        raise DegenerateInputError(
            "m=1 is degenerate: every sample has at least one allele"
        )
    ev = exact_tails(n, m, theta, precision_bits)
    if gmpy2.is_infinite(ev.fs) or ev.s_prime == 0 or ev.t_prime == 0:
        sign = 1 if ev.t_prime == 0 else -1
        raise SaturationError(
            f"tail probability saturated at {precision_bits} bits for "
            f"n={n}, m={m}, theta={theta!r}",
            sign,
        )
    return float(ev.fs)


def recurrence_tails(n: int, m: int, theta: float) -> tuple[float, float, float]:
    """Double-precision tails via the scaled recurrence (benchmark baseline).

    Returns (s_prime, t_prime, fs).  Terms are combined in log space so that
    large theta^k factors cannot overflow; both tails come from their own
    sums, as in the high-precision oracle.
    """
    if m < 1 or m > n:
        raise DomainError(f"m must satisfy 1 <= m <= n, got m={m}, n={n}")
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    row = scaled_rows(n).values
    log_theta = math.log(theta)
    upper_logs = []
    lower_logs = []
    for k in range(n + 1):
        mag = abs(row[k])
        if mag == 0.0:
            continue
        lg = math.log(mag) + k * log_theta
        if k >= m:
            upper_logs.append(lg)
        else:
            lower_logs.append(lg)
    # the common n!/(theta)_n prefactor cancels from every ratio below
    log_upper = log_sum_exp(upper_logs)
    log_lower = log_sum_exp(lower_logs)
    log_total = log_sum_exp([log_upper, log_lower])
    s = math.exp(log_upper - log_total)
    t = math.exp(log_lower - log_total)
    fs = log_upper - log_lower
    return s, t, fs
