"""Single-shot asymptotic estimator for the allele-count tail and Fu's Fs.

Instead of summing Stirling-number terms, the tail probability is read off a
contour-integral representation whose main approximant is a regularized
incomplete beta function.  The pipeline per evaluation is

1. find the saddle point of the log kernel ln((z+1)_n / z^m) on z > 0;
2. map the integrand's pole into the t-domain of the binomial kernel
   ln((1+t)^n / t^m) by matching kernel values, respecting the side of the
   saddle the pole falls on;
3. evaluate the incomplete beta main term at the mapped pole;
4. add a first-order correction built from the kernel curvatures at the two
   saddles.

The saddle point doubles as the transition value of theta: below it the
upper tail is the small, well-conditioned quantity; above it the lower tail
is.  The estimator switches which tail it computes accordingly, so the
log-odds statistic never suffers a 1 - p cancellation.

All indices here follow the convention that a user-facing sample of N
sequences with M distinct alleles enters the kernels with (n, m) =
(N - 1, M - 1); :func:`estimate` applies the shift internally and
everything below it works in shifted coordinates.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import (
    ConvergenceError,
    DegenerateInputError,
    DomainError,
)
from .special import (
    digamma,
    inc_beta,
    log_binomial,
    log_gamma,
    log_pochhammer,
    trigamma,
)
from . import stirling

__all__ = [
    "Branch",
    "Method",
    "ParameterTriple",
    "SaddleContext",
    "FsResult",
    "log_kernel_z",
    "dlog_kernel_z",
    "d2log_kernel_z",
    "log_kernel_t",
    "dlog_kernel_t",
    "d2log_kernel_t",
    "solve_saddle",
    "map_pole",
    "saddle_context",
    "correction_term",
    "estimate",
    "transition_m",
    "COALESCENCE_TOL",
    "EXACT_FALLBACK_CAP",
]

# |t_pole - t_saddle| below this (times max(t_saddle, 1)) counts as coalesced:
# the two terms of the correction individually diverge there.
COALESCENCE_TOL = 1e-4

# Largest shifted n for which the coalesced case falls back to the exact oracle.
EXACT_FALLBACK_CAP = 2000

_MAX_NEWTON_ITER = 200
_ROOT_TOL = 1e-12


class Branch(enum.Enum):
    """Which tail the estimator computed directly."""

    UPPER_TAIL = "upper_tail"  # theta below the transition, P(K >= M) small
    LOWER_TAIL = "lower_tail"  # theta above the transition, P(K < M) small
    COALESCED = "coalesced"  # theta at/near the transition value


class Method(enum.Enum):
    ASYMPTOTIC = "asymptotic"
    EXACT = "exact"
    CLOSED_FORM = "closed_form"
    RECURRENCE = "recurrence"


@dataclass(frozen=True)
class ParameterTriple:
    """User-facing inputs: N sequences, M distinct alleles, diversity theta."""

    n_seq: int
    m_alleles: int
    theta: float

    def __post_init__(self):
        if self.n_seq < 2:
            raise DomainError(f"n_seq must be >= 2, got {self.n_seq}")
        if not 1 <= self.m_alleles <= self.n_seq:
            raise DomainError(
                f"m_alleles must lie in [1, n_seq], got {self.m_alleles}"
            )
        if not self.theta > 0.0:
            raise DomainError(f"theta must be positive, got {self.theta!r}")


@dataclass(frozen=True)
class SaddleContext:
    """Cached saddle data for one evaluation (shifted indices)."""

    n: int
    m: int
    theta: float
    z_saddle: float  # positive zero of the z-kernel slope
    t_saddle: float  # m / (n - m), zero of the t-kernel slope
    t_pole: float  # image of theta under the kernel-matching map
    log_kernel_at_pole: float  # t-kernel value at t_pole
    curvature_z: float  # second derivative of the z-kernel at its saddle
    curvature_t: float  # second derivative of the t-kernel at its saddle
    branch: Branch

    def validate(self) -> None:
        """Re-assert the solver invariants; raises ConvergenceError if broken."""
        slope = dlog_kernel_z(self.z_saddle, self.n, self.m)
        if abs(slope) > 1e-10 * max(1.0, self.m / self.z_saddle):
            raise ConvergenceError(
                f"saddle residual {slope:.3e} too large for n={self.n}, m={self.m}"
            )
        if not (self.curvature_z > 0.0 and self.curvature_t > 0.0):
            raise ConvergenceError("kernel curvatures must be positive at saddle")
        side_theta = _sign(self.theta - self.z_saddle)
        side_pole = _sign(self.t_pole - self.t_saddle)
        if side_theta * side_pole < 0:
            raise ConvergenceError("pole mapped to the wrong side of the saddle")
        lhs = self.log_kernel_at_pole - log_kernel_t(self.t_saddle, self.n, self.m)
        rhs = log_kernel_z(self.theta, self.n, self.m) - log_kernel_z(
            self.z_saddle, self.n, self.m
        )
        if abs(lhs - rhs) > 1e-10 * max(1.0, abs(rhs)):
            raise ConvergenceError(
                f"kernel-matching residual {lhs - rhs:.3e} too large"
            )


@dataclass(frozen=True)
class FsResult:
    """Tail probabilities and the log-odds statistic for one triple.

    ``correction`` is the signed first-order term that was actually added to
    the incomplete-beta main term of the computed branch; ``main_term`` is
    that incomplete-beta value.  Both are NaN/0 when the result came from a
    non-asymptotic path.  ``flags`` may contain "clamped", "saturated" or
    "main_term_only".
    """

    s_prime: float
    t_prime: float
    fs: float
    method: Method
    branch: Branch | None
    main_term: float = math.nan
    correction: float = 0.0
    flags: tuple[str, ...] = field(default=())


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def log_kernel_z(z: float, n: int, m: float) -> float:
    """Log of the z-plane kernel (z+1)_n / z^m for z > 0."""
    if not z > 0.0:
        raise DomainError(f"z must be positive, got {z!r}")
    return log_gamma(z + n + 1.0) - log_gamma(z + 1.0) - m * math.log(z)


def dlog_kernel_z(z: float, n: int, m: float) -> float:
    if not z > 0.0:
        raise DomainError(f"z must be positive, got {z!r}")
    return digamma(z + n + 1.0) - digamma(z + 1.0) - m / z


def d2log_kernel_z(z: float, n: int, m: float) -> float:
    if not z > 0.0:
        raise DomainError(f"z must be positive, got {z!r}")
    return trigamma(z + n + 1.0) - trigamma(z + 1.0) + m / (z * z)


def log_kernel_t(t: float, n: int, m: float) -> float:
    """Log of the t-plane kernel (1+t)^n / t^m for t > 0."""
    if not t > 0.0:
        raise DomainError(f"t must be positive, got {t!r}")
    return n * math.log1p(t) - m * math.log(t)


def dlog_kernel_t(t: float, n: int, m: float) -> float:
    if not t > 0.0:
        raise DomainError(f"t must be positive, got {t!r}")
    return ((n - m) * t - m) / (t * (1.0 + t))


def d2log_kernel_t(t: float, n: int, m: float) -> float:
    if not t > 0.0:
        raise DomainError(f"t must be positive, got {t!r}")
    return -n / ((1.0 + t) * (1.0 + t)) + m / (t * t)


def _newton_bracketed(f, df, lo: float, hi: float, f_lo: float, tol) -> float:
    """Safeguarded Newton on a bracket [lo, hi] with f(lo), f(hi) of opposite sign.

    Falls back to bisection whenever the Newton step leaves the bracket.
    ``tol(x, fx)`` decides convergence.
    """
    x = 0.5 * (lo + hi)
    for _ in range(_MAX_NEWTON_ITER):
        fx = f(x)
        if tol(x, fx):
            return x
        if (fx > 0.0) == (f_lo > 0.0):
            lo = x
        else:
            hi = x
        dfx = df(x)
        if dfx != 0.0:
            step = x - fx / dfx
        else:
            step = math.nan
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        x = step
    raise ConvergenceError(
        f"root refinement did not converge within {_MAX_NEWTON_ITER} iterations"
    )


def solve_saddle(n: int, m: float) -> float:
    """Positive zero of the z-kernel slope; exists for 0 < m < n.

    This is also the transition value of theta at which the upper-tail
    probability passes 1/2.
    """
    if not 0 < m < n:
        raise DomainError(
            f"interior saddle requires 0 < m < n, got m={m}, n={n}"
        )
    f = lambda z: dlog_kernel_z(z, n, m)
    lo = m * 1e-3
    while f(lo) > 0.0:
        lo *= 1e-3
        if lo < 1e-280:
            raise ConvergenceError("no negative-slope bracket endpoint found")
    hi = max(float(m), 1.0)
    grow = 0
    while f(hi) < 0.0:
        hi *= 2.0
        grow += 1
        if grow > 4000:
            raise ConvergenceError("no positive-slope bracket endpoint found")
    if grow:
        lo = hi / 2.0
    tol = lambda z, fz: abs(fz) <= _ROOT_TOL * max(1.0, m / z)
    return _newton_bracketed(f, lambda z: d2log_kernel_z(z, n, m), lo, hi, -1.0, tol)


def map_pole(n: int, m: float, theta: float, z_saddle: float) -> float:
    """Image of the pole at theta in the t-domain.

    Solves kernel_t(t) = kernel_t(t_saddle) + kernel_z(theta) -
    kernel_z(z_saddle) for the root on the same side of t_saddle as theta is
    of z_saddle.  theta == z_saddle maps to t_saddle exactly.
    """
    if not theta > 0.0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    t_saddle = m / (n - m)
    if theta == z_saddle:
        return t_saddle
    rhs = (
        log_kernel_t(t_saddle, n, m)
        + log_kernel_z(theta, n, m)
        - log_kernel_z(z_saddle, n, m)
    )
    f = lambda t: log_kernel_t(t, n, m) - rhs
    tol = lambda t, ft: abs(ft) <= _ROOT_TOL * max(1.0, abs(rhs))
    df = lambda t: dlog_kernel_t(t, n, m)
    if theta > z_saddle:
        hi = 2.0 * t_saddle
        while f(hi) < 0.0:
            hi *= 2.0
            if hi > 1e3 * t_saddle:
                raise ConvergenceError(
                    f"pole-image bracket exceeded 1e3 * t_saddle for "
                    f"n={n}, m={m}, theta={theta}"
                )
        return _newton_bracketed(f, df, t_saddle, hi, -1.0, tol)
    lo = 0.5 * t_saddle
    while f(lo) < 0.0:
        lo *= 0.5
        if lo < 1e-300:
            raise ConvergenceError(
                f"pole-image bracket shrank below 1e-300 for "
                f"n={n}, m={m}, theta={theta}"
            )
    # on (0, t_saddle] the kernel decreases toward the saddle, so f(lo) > 0
    return _newton_bracketed(f, df, lo, t_saddle, 1.0, tol)


def saddle_context(n: int, m: int, theta: float) -> SaddleContext:
    """Solve both saddles and the pole image; classify the branch."""
    z_saddle = solve_saddle(n, m)
    t_saddle = m / (n - m)
    t_pole = map_pole(n, m, theta, z_saddle)
    if abs(t_pole - t_saddle) <= COALESCENCE_TOL * max(t_saddle, 1.0):
        branch = Branch.COALESCED
    elif theta < z_saddle:
        branch = Branch.UPPER_TAIL
    else:
        branch = Branch.LOWER_TAIL
    return SaddleContext(
        n=n,
        m=m,
        theta=theta,
        z_saddle=z_saddle,
        t_saddle=t_saddle,
        t_pole=t_pole,
        log_kernel_at_pole=log_kernel_t(t_pole, n, m),
        curvature_z=d2log_kernel_z(z_saddle, n, m),
        curvature_t=d2log_kernel_t(t_saddle, n, m),
        branch=branch,
    )


def _regular_part_at_saddle(ctx: SaddleContext, theta: float, t_pole: float) -> float:
    """The pole-split remainder g at the t-saddle.

    Both pieces diverge as the pole approaches the saddle but their
    difference stays bounded; callers must keep |t_pole - t_saddle| away
    from zero (the coalesced path handles the remainder by symmetric
    probing).
    """
    ratio = math.sqrt(ctx.curvature_t / ctx.curvature_z)
    return ratio / (ctx.z_saddle - theta) - 1.0 / (ctx.t_saddle - t_pole)


def _invert_kernel_z(n: int, m: int, target: float, side: int, z_saddle: float) -> float:
    """Solve log_kernel_z(z) = target for z on the given side of the saddle."""
    f = lambda z: log_kernel_z(z, n, m) - target
    df = lambda z: dlog_kernel_z(z, n, m)
    tol = lambda z, fz: abs(fz) <= 1e-11 * max(1.0, abs(target))
    if side > 0:
        hi = 2.0 * z_saddle
        while f(hi) < 0.0:
            hi *= 2.0
            if hi > 1e12 * z_saddle:
                raise ConvergenceError("kernel inversion bracket blew up")
        return _newton_bracketed(f, df, z_saddle, hi, -1.0, tol)
    lo = 0.5 * z_saddle
    while f(lo) < 0.0:
        lo *= 0.5
        if lo < 1e-300:
            raise ConvergenceError("kernel inversion bracket vanished")
    return _newton_bracketed(f, df, lo, z_saddle, 1.0, tol)


def _probe_averaged_regular_part(ctx: SaddleContext) -> float:
    """Remainder g at the saddle when the pole has (nearly) coalesced.

    Evaluates g at two pole positions placed symmetrically about the
    t-saddle and averages; the antisymmetric divergent parts cancel and the
    finite part survives to O(delta^2).
    """
    delta = COALESCENCE_TOL * max(ctx.t_saddle, 1.0)
    kernel_at_saddle = log_kernel_t(ctx.t_saddle, ctx.n, ctx.m)
    base_z = log_kernel_z(ctx.z_saddle, ctx.n, ctx.m)
    total = 0.0
    for sgn in (1, -1):
        t_probe = ctx.t_saddle + sgn * delta
        target = base_z + log_kernel_t(t_probe, ctx.n, ctx.m) - kernel_at_saddle
        theta_probe = _invert_kernel_z(ctx.n, ctx.m, target, sgn, ctx.z_saddle)
        total += _regular_part_at_saddle(ctx, theta_probe, t_probe)
    return 0.5 * total


def correction_term(ctx: SaddleContext, theta: float | None = None) -> float:
    """First-order correction to the incomplete-beta main term.

    Computed in log-magnitude/sign form so the binomial factor can never
    overflow.  Near pole/saddle coalescence the remainder is obtained by
    symmetric probing instead of the directly divergent formula.
    """
    if theta is None:
        theta = ctx.theta
    if ctx.branch is Branch.COALESCED:
        g = _probe_averaged_regular_part(ctx)
    else:
        g = _regular_part_at_saddle(ctx, theta, ctx.t_pole)
    if g == 0.0:
        return 0.0
    log_mag = (
        -ctx.log_kernel_at_pole
        + log_binomial(ctx.n, ctx.m - 1)
        + math.log(abs(g))
    )
    return math.copysign(math.exp(log_mag), g)


def _closed_form_result(params: ParameterTriple) -> FsResult:
    # all alleles distinct: the tail is a single term, theta^N / (theta)_N
    log_s = params.n_seq * math.log(params.theta) - log_pochhammer(
        params.theta, params.n_seq
    )
    s = math.exp(log_s)
    if s <= 0.0:
        return FsResult(0.0, 1.0, -math.inf, Method.CLOSED_FORM, None,
                        flags=("saturated",))
    if s >= 1.0:
        return FsResult(1.0, 0.0, math.inf, Method.CLOSED_FORM, None,
                        flags=("saturated",))
    t = -math.expm1(log_s)
    fs = log_s - math.log(t)
    return FsResult(s, t, fs, Method.CLOSED_FORM, None)


def _exact_fallback(params: ParameterTriple, branch: Branch,
                    oracle_bits: int) -> FsResult:
    ev = stirling.exact_tails(
        params.n_seq, params.m_alleles, params.theta, oracle_bits
    )
    s = float(ev.s_prime)
    t = float(ev.t_prime)
    fs = float(ev.fs)
    flags = ()
    if s <= 0.0 or t <= 0.0 or math.isinf(fs):
        flags = ("saturated",)
    return FsResult(s, t, fs, Method.EXACT, branch, flags=flags)


def estimate(
    params: ParameterTriple,
    *,
    fallback_cap: int = EXACT_FALLBACK_CAP,
    oracle_bits: int = stirling.DEFAULT_PRECISION_BITS,
) -> FsResult:
    """Fu's Fs and both tail probabilities for one parameter triple.

    Dispatch: M = 1 is degenerate; M = N uses the closed form; otherwise the
    asymptotic path runs with the branch picked by the transition value.  A
    (near-)coalesced pole falls back to the exact oracle up to
    ``fallback_cap``, and to the main term alone beyond it.
    """
    if params.m_alleles == 1:
        raise DegenerateInputError(
            "degenerate: single allele (the statistic is unbounded)"
        )
    if params.m_alleles == params.n_seq:
        return _closed_form_result(params)

    n = params.n_seq - 1
    m = params.m_alleles - 1
    theta = params.theta
    ctx = saddle_context(n, m, theta)
    ctx.validate()

    if ctx.branch is Branch.COALESCED and theta != ctx.z_saddle:
        if n <= fallback_cap:
            return _exact_fallback(params, Branch.COALESCED, oracle_bits)
        main = _main_term(ctx)
        s, t, fs, flags = _tails_from_upper(main) if theta <= ctx.z_saddle \
            else _tails_from_lower(main)
        return FsResult(
            s, t, fs, Method.ASYMPTOTIC, Branch.COALESCED,
            main_term=main, correction=0.0,
            flags=flags + ("main_term_only",),
        )

    main = _main_term(ctx)
    correction = correction_term(ctx)
    if ctx.branch is Branch.LOWER_TAIL:
        raw = main - correction
        applied = -correction
    else:
        raw = main + correction
        applied = correction

    clamped = not 0.0 <= raw <= 1.0
    raw = min(1.0, max(0.0, raw))
    if ctx.branch is Branch.LOWER_TAIL:
        s, t, fs, flags = _tails_from_lower(raw)
    else:
        s, t, fs, flags = _tails_from_upper(raw)
    if clamped:
        flags = flags + ("clamped",)
    return FsResult(
        s, t, fs, Method.ASYMPTOTIC, ctx.branch,
        main_term=main, correction=applied, flags=flags,
    )


def _main_term(ctx: SaddleContext) -> float:
    """Incomplete-beta main term for the branch recorded in the context."""
    x = ctx.t_pole / (1.0 + ctx.t_pole)
    if ctx.branch is Branch.LOWER_TAIL:
        return inc_beta(ctx.n - ctx.m + 1.0, float(ctx.m), 1.0 - x)
    return inc_beta(float(ctx.m), ctx.n - ctx.m + 1.0, x)


def _tails_from_upper(s: float) -> tuple[float, float, float, tuple]:
    if s <= 0.0:
        return 0.0, 1.0, -math.inf, ("saturated",)
    if s >= 1.0:
        return 1.0, 0.0, math.inf, ("saturated",)
    return s, 1.0 - s, math.log(s) - math.log1p(-s), ()


def _tails_from_lower(t: float) -> tuple[float, float, float, tuple]:
    if t <= 0.0:
        return 1.0, 0.0, math.inf, ("saturated",)
    if t >= 1.0:
        return 0.0, 1.0, -math.inf, ("saturated",)
    return 1.0 - t, t, math.log1p(-t) - math.log(t), ()


def transition_m(n: int, theta: float) -> float:
    """Continuous allele count at which theta sits exactly on the transition.

    Root of z_saddle(n, m) - theta over real m in (0, n); diagnostic only.
    The saddle value increases with m, so bisection is safe.
    """
    if not theta > 0.0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    lo, hi = 1e-9 * n, n * (1.0 - 1e-12)
    f = lambda m: solve_saddle(n, m) - theta
    f_lo = f(lo)
    if f_lo > 0.0:
        return lo
    if f(hi) < 0.0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-10 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)
