"""Tests for the exact big-integer triangle, scaled recurrence, and oracle.

The independent cross-check used throughout is pure-Python integer /
Fraction arithmetic; the module under test runs on gmpy2.
"""

import io
import math
import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fufs.errors import (
    DegenerateInputError,
    DomainError,
    ResourceError,
)
from fufs.stirling import (
    ExactEvaluation,
    build_table,
    exact_fs,
    exact_tails,
    load_scaled_cache,
    recurrence_tails,
    save_scaled_cache,
    scaled_rows,
    stirling_row,
)


def unsigned_rows_python(n):
    """Reference triangle |S_j^(k)| in pure Python ints."""
    rows = [[1]]
    for j in range(n):
        prev = rows[-1]
        nxt = [0] * (j + 2)
        for k in range(j + 2):
            a = prev[k - 1] if 1 <= k <= j + 1 else 0
            b = prev[k] if k <= j else 0
            nxt[k] = a + j * b
        rows.append(nxt)
    return rows


def exact_tails_fraction(n, m, theta: Fraction):
    """Exact rational tails, fully independent of the gmpy2 code path."""
    row = unsigned_rows_python(n)[n]
    upper = sum(row[k] * theta**k for k in range(m, n + 1))
    lower = sum(row[k] * theta**k for k in range(0, m))
    total = upper + lower
    return Fraction(upper, total), Fraction(lower, total)


class TestBuildTable:
    def test_known_entry(self):
        table = build_table(12)
        assert table.value(10, 5) == -269325

    def test_special_values(self):
        table = build_table(30)
        for n in range(31):
            assert table.value(n, n) == 1
        for n in range(1, 31):
            assert table.value(n, 0) == 0
            assert table.value(n, 1) == (-1) ** (n - 1) * math.factorial(n - 1)

    def test_sign_pattern(self):
        table = build_table(25)
        for n in range(26):
            for k in range(n + 1):
                assert (-1) ** (n - k) * table.value(n, k) >= 0

    def test_resource_cap(self):
        with pytest.raises(ResourceError):
            build_table(5000)

    def test_out_of_range_lookup(self):
        table = build_table(5)
        with pytest.raises(DomainError):
            table.value(6, 0)
        with pytest.raises(DomainError):
            table.value(3, 4)

    @pytest.mark.parametrize("theta", [Fraction(1, 2), Fraction(1), Fraction(7, 3), Fraction(10)])
    def test_defining_expansion_exact(self, theta):
        # sum_k (-1)^(n-k) S_n^k theta^k equals the rising factorial, exactly
        table = build_table(30)
        for n in range(31):
            acc = sum(
                (-1) ** (n - k) * table.value(n, k) * theta**k for k in range(n + 1)
            )
            rising = math.prod((theta + i for i in range(n)), start=Fraction(1))
            assert acc == rising

    def test_matches_python_reference(self):
        table = build_table(40)
        ref = unsigned_rows_python(40)
        for n in range(41):
            for k in range(n + 1):
                assert abs(table.value(n, k)) == ref[n][k]


class TestStirlingRow:
    def test_streamed_matches_table(self):
        table = build_table(60)
        row = stirling_row(60)
        assert list(table.rows[60]) == row

    def test_row_zero(self):
        assert stirling_row(0) == [1]


class TestScaledRows:
    def test_known_entry_scaled(self):
        row = scaled_rows(10)
        assert row.values[5] == pytest.approx(-269325 / 3628800, rel=1e-13)

    def test_diagonal(self):
        for n in (1, 5, 12):
            assert scaled_rows(n).values[n] == pytest.approx(
                1.0 / math.factorial(n), rel=1e-13
            )

    def test_bounded_and_alternating(self):
        row = scaled_rows(80)
        assert np.all(np.abs(row.values) <= 1.0)
        for k in range(81):
            if row.values[k] != 0.0:
                assert math.copysign(1.0, row.values[k]) == (-1.0) ** (80 - k)

    @pytest.mark.parametrize("n", [10, 100, 200])
    def test_matches_big_integer_rows(self, n):
        ref = unsigned_rows_python(n)[n]
        fact = math.factorial(n)
        got = scaled_rows(n).values
        for k in range(n + 1):
            expected = (-1) ** (n - k) * Fraction(ref[k], fact)
            if expected == 0:
                assert got[k] == 0.0
            else:
                assert got[k] == pytest.approx(float(expected), rel=1e-12)

    def test_rejects_zero(self):
        with pytest.raises(DomainError):
            scaled_rows(0)


class TestScaledCache:
    def test_round_trip(self):
        buf = io.BytesIO()
        save_scaled_cache(buf, 25)
        buf.seek(0)
        rows = load_scaled_cache(buf)
        assert len(rows) == 25
        for row in rows:
            assert row.values.shape == (row.n + 1,)
        np.testing.assert_allclose(rows[9].values, scaled_rows(10).values, rtol=1e-15)

    def test_header_layout(self):
        buf = io.BytesIO()
        save_scaled_cache(buf, 3)
        raw = buf.getvalue()
        assert raw[:5] == b"FUFS1"
        assert struct.unpack("<Q", raw[5:13])[0] == 3
        # row 1 has two doubles: 0.0 and 1.0
        assert struct.unpack("<2d", raw[13:29]) == (0.0, 1.0)

    def test_bad_magic(self):
        with pytest.raises(DomainError):
            load_scaled_cache(io.BytesIO(b"NOPE!" + b"\x00" * 16))

    def test_truncated(self):
        buf = io.BytesIO()
        save_scaled_cache(buf, 10)
        raw = buf.getvalue()[:-4]
        with pytest.raises(DomainError):
            load_scaled_cache(io.BytesIO(raw))


class TestExactTails:
    def test_table1_smallest_row(self):
        # 25 sequences, 20 alleles: printed reference is -6.8294578
        ev = exact_tails(25, 20, "9.39")
        assert float(ev.fs) == pytest.approx(-6.8294578, abs=1e-7)

    def test_fraction_oracle_agreement(self):
        s_ref, t_ref = exact_tails_fraction(100, 31, Fraction(3937, 100))
        ev = exact_tails(100, 31, "39.37")
        assert float(ev.s_prime) == pytest.approx(float(s_ref), rel=1e-14)
        assert float(ev.t_prime) == pytest.approx(float(t_ref), rel=1e-14)

    def test_switch_example_true_values(self):
        # the upper tail at (100, 31, 39.37) is far closer to 1 than the
        # often-quoted 0.99872; the rational oracle fixes the true values
        ev = exact_tails(100, 31, "39.37")
        assert float(ev.s_prime) == pytest.approx(0.9999926844, rel=1e-9)
        assert float(ev.t_prime) == pytest.approx(7.315624468e-6, rel=1e-9)
        assert float(ev.fs) == pytest.approx(11.82549084, rel=1e-9)

    def test_full_distribution_at_m1(self):
        for n in (1, 7, 30):
            ev = exact_tails(n, 1, 2.5)
            assert ev.s_prime == 1
            assert ev.t_prime == 0

    def test_m_equals_n_closed_form(self):
        # single-term tail: theta^n over the rising factorial
        theta = 3.25
        n = 17
        expected = float(
            Fraction(13, 4) ** n
            / math.prod((Fraction(13, 4) + i for i in range(n)), start=Fraction(1))
        )
        ev = exact_tails(n, n, theta)
        assert float(ev.s_prime) == pytest.approx(expected, rel=1e-13)
        full = exact_tails_fraction(n, n, Fraction(13, 4))
        assert float(full[0]) == pytest.approx(expected, rel=1e-15)

    def test_tails_sum_to_one(self):
        for (n, m, th) in [(50, 10, 1.0), (200, 67, 8.96), (333, 2, 49.0)]:
            ev = exact_tails(n, m, th)
            assert float(ev.s_prime + ev.t_prime - 1) == pytest.approx(
                0.0, abs=2.0 ** (1 - ev.precision_bits)
            )

    def test_monotone_in_m(self):
        vals = [float(exact_tails(60, m, 7.5).s_prime) for m in range(1, 61)]
        assert all(b <= a + 1e-30 for a, b in zip(vals, vals[1:]))

    def test_monotone_in_theta(self):
        vals = [float(exact_tails(60, 25, th).s_prime) for th in (1, 2, 5, 10, 20, 50)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            exact_tails(10, 0, 1.0)
        with pytest.raises(DomainError):
            exact_tails(10, 11, 1.0)
        with pytest.raises(DomainError):
            exact_tails(10, 5, -1.0)

    def test_precision_bits_env(self):
        ev = exact_tails(40, 20, 9.0, precision_bits=128)
        assert ev.precision_bits == 128
        ev2 = exact_tails(40, 20, 9.0, precision_bits=320)
        assert float(ev.fs) == pytest.approx(float(ev2.fs), rel=1e-30)

    @given(
        st.integers(min_value=2, max_value=80),
        st.integers(min_value=2, max_value=80),
        st.floats(min_value=0.5, max_value=60.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_random_triples_match_fraction_oracle(self, n, m, theta):
        if m > n:
            n, m = m, n
        theta_frac = Fraction(theta).limit_denominator(10**6)
        s_ref, _ = exact_tails_fraction(n, m, theta_frac)
        ev = exact_tails(n, m, float(theta_frac))
        assert float(ev.s_prime) == pytest.approx(float(s_ref), rel=1e-12)


class TestExactFs:
    def test_paper_reference_rows(self):
        assert exact_fs(100, 31, "39.37") == pytest.approx(11.82549084, rel=1e-8)
        assert exact_fs(500, 95, "9.04") == pytest.approx(-46.76238956, abs=5e-8)

    def test_degenerate_single_allele(self):
        with pytest.raises(DegenerateInputError):
            exact_fs(100, 1, 5.0)

    def test_matches_log_odds_of_tails(self):
        ev = exact_tails(150, 40, 12.0)
        fs = exact_fs(150, 40, 12.0)
        assert fs == pytest.approx(
            math.log(float(ev.s_prime) / float(ev.t_prime)), rel=1e-12
        )


class TestRecurrenceTails:
    @pytest.mark.parametrize(
        "n,m,theta",
        [(25, 20, 9.39), (100, 40, 9.37), (500, 95, 9.04), (100, 31, 39.37)],
    )
    def test_matches_oracle(self, n, m, theta):
        s, t, fs = recurrence_tails(n, m, theta)
        ev = exact_tails(n, m, theta)
        assert s == pytest.approx(float(ev.s_prime), rel=1e-11)
        assert t == pytest.approx(float(ev.t_prime), rel=1e-11)
        assert fs == pytest.approx(float(ev.fs), rel=1e-11, abs=1e-11)

    def test_large_theta_no_overflow(self):
        # theta^k would overflow a double near k ~ 180 if computed naively
        s, t, fs = recurrence_tails(400, 150, 50.0)
        assert math.isfinite(fs)
        assert 0.0 <= s <= 1.0
        assert s + t == pytest.approx(1.0, abs=1e-12)
        assert fs == pytest.approx(exact_fs(400, 150, 50.0), rel=1e-10)

    def test_far_tail_saturates_in_double(self):
        # scaled entries for k >= 250 vanish below the double subnormal range,
        # so the double baseline reports a saturated -inf there (the
        # high-precision oracle still resolves fs ~ -97)
        s, t, fs = recurrence_tails(500, 250, 50.0)
        assert fs == -math.inf
        assert s == 0.0
