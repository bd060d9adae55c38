import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from sipqkd import protocol as pr
from sipqkd.devices import IntensityClass
from sipqkd.optics import STATES, Basis

H, V, D, A = STATES
R, G = Basis.RECTILINEAR, Basis.DIAGONAL


def h2_oracle(p):
    # entropy in bits via scipy, an independent implementation
    return float(stats.entropy([p, 1 - p], base=2))


def gllp_oracle(q_mu, e, mu, q, f):
    p_multi = 1.0 - stats.poisson.cdf(1, mu)
    omega = 1.0 - p_multi / q_mu
    return q * q_mu * (-f * h2_oracle(e) + omega * (1.0 - h2_oracle(e / omega)))


class TestCoding:
    def test_examples(self):
        assert pr.encode(0, R) is H
        assert pr.encode(1, G) is A
        assert pr.encode(1, R) is V
        assert pr.encode(0, G) is D

    def test_bijection(self):
        images = {pr.encode(b, beta) for b in (0, 1) for beta in (R, G)}
        assert images == set(STATES)
        for b in (0, 1):
            for beta in (R, G):
                assert pr.decode(pr.encode(b, beta)) == (b, beta)


class TestPattern:
    def test_all_signal(self):
        pat = pr.random_pattern(np.random.default_rng(0), 4, 0.0)
        assert all(r.intensity_class is IntensityClass.SIGNAL for r in pat)

    def test_frequencies(self):
        bits, bases, _ = pr.random_pattern_arrays(np.random.default_rng(1), 10**6)
        counts = np.bincount(2 * bases + bits, minlength=4) / 10**6
        assert counts == pytest.approx([0.25] * 4, abs=0.002)

    def test_decoy_fraction(self):
        _, _, cls = pr.random_pattern_arrays(np.random.default_rng(2), 10**5, 0.3)
        assert cls.mean() == pytest.approx(0.3, abs=0.01)

    def test_deterministic(self):
        a = pr.random_pattern(np.random.default_rng(5), 100, 0.5)
        b = pr.random_pattern(np.random.default_rng(5), 100, 0.5)
        assert a == b

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            pr.random_pattern(np.random.default_rng(0), 4, 1.5)

    def test_alternating(self):
        pat = pr.alternating_pattern(6)
        assert [int(r.intensity_class) for r in pat] == [0, 1, 0, 1, 0, 1]
        assert {r.state for r in pat} == {D}


class TestSift:
    def test_examples(self):
        alice = [pr.AliceRecord(0, 0, R), pr.AliceRecord(1, 0, G)]
        bob = [pr.BobRecord(0, H), pr.BobRecord(1, V)]
        assert pr.sift(alice, bob) == [(0, 0)]

    @pytest.mark.parametrize("s", STATES)
    @pytest.mark.parametrize("d", STATES)
    def test_exhaustive(self, s, d):
        bit, basis = pr.decode(s)
        out = pr.sift([pr.AliceRecord(7, bit, basis)], [pr.BobRecord(7, d)])
        if s.basis is d.basis:
            assert out == [(bit, pr.decode(d)[0])]
        else:
            assert out == []

    def test_dark_counts_skipped(self):
        assert pr.sift([pr.AliceRecord(0, 0, R)], [pr.BobRecord(None, H)]) == []

    def test_duplicate_alice(self):
        with pytest.raises(pr.DataError):
            pr.sift([pr.AliceRecord(0, 0, R), pr.AliceRecord(0, 1, R)], [])

    def test_duplicate_bob(self):
        with pytest.raises(pr.DataError):
            pr.sift([pr.AliceRecord(0, 0, R)], [pr.BobRecord(0, H), pr.BobRecord(0, V)])

    def test_unknown_pulse(self):
        with pytest.raises(pr.DataError):
            pr.sift([pr.AliceRecord(0, 0, R)], [pr.BobRecord(3, H)])

    def test_ideal_fraction(self):
        # ideal optics: Bob picks a random basis and reads the bit exactly when it matches
        rng = np.random.default_rng(3)
        alice = pr.random_pattern(rng, 10**5)
        bob = []
        for a in alice:
            basis = pr.BASES[int(rng.integers(2))]
            bit = a.bit if basis is a.basis else int(rng.integers(2))
            bob.append(pr.BobRecord(a.pulse_index, pr.encode(bit, basis)))
        kept = pr.sift(alice, bob)
        assert len(kept) / len(bob) == pytest.approx(0.5, abs=0.01)
        assert all(x == y for x, y in kept)


class TestDoubleClicks:
    def test_same_basis_random_bit(self):
        rng = np.random.default_rng(0)
        bits = []
        for _ in range(2000):
            out = pr.resolve_double_clicks([pr.BobRecord(0, H), pr.BobRecord(0, V)], rng)
            assert len(out) == 1 and out[0].basis is R
            bits.append(out[0].bit)
        assert np.mean(bits) == pytest.approx(0.5, abs=0.05)

    def test_cross_basis(self):
        rng = np.random.default_rng(1)
        picked = [pr.resolve_double_clicks([pr.BobRecord(0, H), pr.BobRecord(0, D)], rng)[0].detector for _ in range(2000)]
        assert picked.count(H) / 2000 == pytest.approx(0.5, abs=0.05)

    def test_passthrough(self):
        recs = [pr.BobRecord(None, H), pr.BobRecord(3, V)]
        assert pr.resolve_double_clicks(recs, np.random.default_rng(0)) == recs


class TestQber:
    def test_examples(self):
        assert pr.qber([(0, 0)] * 10) == 0.0
        assert pr.qber([(0, 1)] * 54 + [(1, 1)] * 946) == pytest.approx(0.054)
        assert pr.qber([(0, 1), (1, 0)]) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            pr.qber([])


class TestEntropy:
    @pytest.mark.parametrize("p, expected", [(0.5, 1.0), (0.054, 0.3032), (0.11, 0.4999), (0.0, 0.0), (1.0, 0.0)])
    def test_examples(self, p, expected):
        assert pr.binary_entropy(p) == pytest.approx(expected, abs=1e-4)

    @given(st.floats(0.0, 1.0))
    def test_oracle_and_symmetry(self, p):
        assert pr.binary_entropy(p) == pytest.approx(h2_oracle(p), abs=1e-12)
        assert pr.binary_entropy(p) == pytest.approx(pr.binary_entropy(1 - p), abs=1e-12)
        assert 0.0 <= pr.binary_entropy(p) <= 1.0

    @pytest.mark.parametrize("bad", [-0.1, 1.1])
    def test_domain(self, bad):
        with pytest.raises(ValueError):
            pr.binary_entropy(bad)


class TestShorPreskill:
    def test_examples(self):
        assert pr.shor_preskill_fraction(0.0) == 1.0
        assert pr.shor_preskill_fraction(0.2) == pytest.approx(-0.4438, abs=1e-4)

    def test_threshold(self):
        root = optimize.brentq(lambda e: 1 - 2 * h2_oracle(e), 0.01, 0.4, xtol=1e-12)
        t = pr.shor_preskill_threshold()
        assert t == pytest.approx(root, abs=1e-6)
        assert t == pytest.approx(0.1100, abs=5e-4)

    def test_sign_grid(self):
        t = pr.shor_preskill_threshold()
        for e in np.arange(0.0, 0.5, 1e-3):
            if abs(e - t) > 1e-6:
                assert (pr.shor_preskill_fraction(e) > 0) == (e < t)


class TestGllp:
    def test_single_photon_limit(self):
        assert pr.gllp_rate_no_decoy(1e-3, 0.0, 1e-9) == pytest.approx(0.5 * 1e-3, rel=1e-6)

    def test_oracle_at_demo_point(self):
        q_mu = 13.2e3 / 9.71e6
        got = pr.gllp_rate_no_decoy(q_mu, 0.054, 0.024, 0.5, 1.0)
        assert got == pytest.approx(gllp_oracle(q_mu, 0.054, 0.024, 0.5, 1.0), rel=1e-10)

    @settings(max_examples=200)
    @given(st.floats(1e-3, 0.3), st.floats(0.0, 0.5), st.floats(1e-3, 1.0), st.floats(0.05, 1.0), st.floats(1.0, 1.5))
    def test_oracle_random(self, q_mu, e, mu, q, f):
        kr = pr.gllp_key_rate(q_mu, e, mu, q, f)
        p_multi = 1.0 - stats.poisson.cdf(1, mu)
        if p_multi >= q_mu:
            assert kr.rate == 0.0 and kr.multi_photon_dominated
            return
        omega = 1.0 - p_multi / q_mu
        if e / omega <= 0.5:
            assert kr.rate == pytest.approx(max(gllp_oracle(q_mu, e, mu, q, f), 0.0), rel=1e-9, abs=1e-15)
        assert kr.rate >= 0.0

    def test_multi_photon_dominated(self):
        kr = pr.gllp_key_rate(1e-3, 0.01, 0.5)
        assert kr.rate == 0.0 and kr.multi_photon_dominated

    def test_monotone_grid(self):
        q_mu = 13.2e3 / 9.71e6
        es = np.linspace(0.0, 0.11, 45)
        fs = np.linspace(1.0, 1.22, 23)
        grid = np.array([[pr.gllp_rate_no_decoy(q_mu, e, 0.024, 0.5, f) for f in fs] for e in es])
        assert np.all(np.diff(grid, axis=0) <= 1e-18)
        assert np.all(np.diff(grid, axis=1) <= 1e-18)

    @pytest.mark.parametrize(
        "args",
        [(0.0, 0.05, 0.02), (1e-3, 0.6, 0.02)],
    )
    def test_domain(self, args):
        with pytest.raises(ValueError):
            pr.gllp_rate_no_decoy(*args)

    def test_bad_f(self):
        with pytest.raises(ValueError):
            pr.gllp_rate_no_decoy(1e-3, 0.05, 0.02, f=0.9)


class TestStats:
    def test_zero_detections(self):
        s = pr.stats_from_counts(1000, 0, 0, 0, 0.024, 9.71e6)
        assert s.raw_rate_bps == s.sifted_rate_bps == s.secret_rate_bps == 0.0
        assert not s.qber_defined and math.isnan(s.qber)

    def test_rates(self):
        s = pr.stats_from_counts(9_710_000, 13_200, 6_600, 356, 0.024, 9.71e6)
        assert s.raw_rate_bps == pytest.approx(13_200)
        assert s.sifted_rate_bps == pytest.approx(6_600)
        assert s.qber == pytest.approx(356 / 6600)
        expected = gllp_oracle(13_200 / 9_710_000, 356 / 6600, 0.024, 0.5, 1.0) * 9.71e6
        assert s.secret_rate_bps == pytest.approx(expected, rel=1e-9)

    def test_clock_linearity(self):
        a = pr.stats_from_counts(10**6, 1200, 600, 30, 0.024, 9.71e6)
        b = pr.stats_from_counts(10**6, 1200, 600, 30, 0.024, 2 * 9.71e6)
        assert b.raw_rate_bps == pytest.approx(2 * a.raw_rate_bps)
        assert b.secret_rate_bps == pytest.approx(2 * a.secret_rate_bps)

    def test_counter_order(self):
        with pytest.raises(pr.DataError):
            pr.stats_from_counts(100, 5, 6, 0, 0.024, 9.71e6)

    def test_session_stats(self):
        alice = [pr.AliceRecord(i, 0, R) for i in range(10)]
        bob = [pr.BobRecord(0, H), pr.BobRecord(1, V), pr.BobRecord(2, D)]
        kept = pr.sift(alice, bob)
        s = pr.session_stats(alice, bob, kept, 9.71e6, 0.024)
        assert (s.pulses_emitted, s.detections, s.sifted_bits, s.errors) == (10, 3, 2, 1)
        assert s.qber == 0.5
