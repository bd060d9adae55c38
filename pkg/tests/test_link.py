import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipqkd import link as lk
from sipqkd.devices import IntensityClass, OpticalPulse
from sipqkd.optics import STATES, JonesMatrix, apply, projection_probability, rotation, state_to_jones

H, V, D, A = STATES
IDEAL_SPAD = lk.SpadParams(efficiency=1.0, dead_time_us=0.0, dark_counts_per_s=0.0)
IDEAL_RX = lk.ReceiverParams(pbs_extinction_db=math.inf)


def pulse(state=H, mu=0.024, t=0.0, index=0):
    return OpticalPulse(index, t, mu, state_to_jones(state), 2.4, IntensityClass.SIGNAL)


class TestChannel:
    def test_deterministic(self):
        assert lk.make_channel(11, 6.1) == lk.make_channel(11, 6.1)
        assert lk.make_channel(11, 6.1) != lk.make_channel(12, 6.1)

    def test_unitary(self):
        for s in range(200):
            u = lk.make_channel(s, 6.1).rotation.as_array()
            assert np.abs(u.conj().T @ u - np.eye(2)).max() < 1e-12

    def test_isotropy(self):
        h = state_to_jones(H)
        vals = [projection_probability(h, apply(lk.make_channel(s, 0.0).rotation, h)) for s in range(1000)]
        assert np.mean(vals) == pytest.approx(0.5, abs=0.02)

    def test_apply_identity(self):
        p = pulse(D)
        assert lk.channel_apply(lk.ChannelParams(loss_db=0.0), p) == p

    def test_apply_loss(self):
        out = lk.channel_apply(lk.ChannelParams(loss_db=6.1), pulse())
        assert out.mu == pytest.approx(0.024 * 10 ** -0.61, rel=1e-12)
        assert out.mu == pytest.approx(5.89e-3, rel=1e-3)

    @given(st.integers(0, 2**32 - 1), st.sampled_from(STATES))
    def test_apply_preserves_power(self, seed, s):
        out = lk.channel_apply(lk.make_channel(seed, 3.0), pulse(s))
        assert out.jones.power == pytest.approx(1.0, abs=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            lk.ChannelParams(loss_db=-1.0)


class TestCompensation:
    def test_identity(self):
        r = lk.set_compensation(lk.ReceiverParams(), lk.ChannelParams())
        assert np.allclose(r.compensation.as_array(), np.eye(2), atol=0)

    def test_inverse_oracle(self):
        for s in range(100):
            c = lk.make_channel(s, 6.1)
            r = lk.set_compensation(lk.ReceiverParams(), c)
            inv = np.linalg.inv(c.rotation.as_array())
            assert np.abs(r.compensation.as_array() - inv).max() < 1e-10
            assert np.abs((r.compensation @ c.rotation).as_array() - np.eye(2)).max() < 1e-10

    def test_alignment(self):
        for s in range(50):
            c = lk.make_channel(s, 0.0)
            r = lk.set_compensation(IDEAL_RX, c)
            out = apply(r.compensation, apply(c.rotation, state_to_jones(H)))
            assert projection_probability(state_to_jones(H), out) >= 1 - 1e-10

    def test_misalignment_leak(self):
        c = lk.make_channel(3, 0.0)
        r = lk.set_compensation(IDEAL_RX, c, misalignment_rad=0.1)
        out = apply(r.compensation, apply(c.rotation, state_to_jones(H)))
        assert projection_probability(state_to_jones(V), out) == pytest.approx(math.sin(0.1) ** 2, rel=1e-9)
        assert projection_probability(state_to_jones(V), out) == pytest.approx(9.97e-3, rel=1e-3)


class TestClicks:
    def test_zero_mu(self):
        probs = lk.click_probabilities(lk.ReceiverParams(), pulse(mu=0.0), lk.SpadParams())
        assert all(v == 0.0 for v in probs.values())

    def test_h_pulse(self):
        spad = replace(IDEAL_SPAD, efficiency=0.2)
        probs = lk.click_probabilities(IDEAL_RX, pulse(H, mu=0.006), spad)
        assert probs[H] == pytest.approx(0.5 * -math.expm1(-0.0012), rel=1e-12)
        assert probs[H] == pytest.approx(5.997e-4, rel=1e-3)
        assert probs[V] < 1e-10

    def test_conjugate_basis(self):
        probs = lk.click_probabilities(IDEAL_RX, pulse(H, mu=0.3), IDEAL_SPAD)
        assert probs[D] == pytest.approx(0.25 * -math.expm1(-0.3), rel=1e-12)
        assert probs[A] == pytest.approx(probs[D], rel=1e-12)

    def test_pbs_leak(self):
        probs = lk.click_probabilities(lk.ReceiverParams(pbs_extinction_db=30.0), pulse(H, mu=1.0), IDEAL_SPAD)
        assert probs[V] / probs[H] == pytest.approx(1e-3 / (1 - 1e-3), rel=1e-9)

    @settings(max_examples=100)
    @given(
        st.integers(0, 2**32 - 1),
        st.sampled_from(STATES),
        st.floats(0.0, 5.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
    )
    def test_sum_bound(self, seed, s, mu, eff, split, eps):
        c = lk.make_channel(seed, 0.0)
        r = lk.set_compensation(lk.ReceiverParams(tbs_split=split), c, misalignment_rad=eps)
        spad = lk.SpadParams(efficiency=eff)
        probs = lk.click_probabilities(r, lk.channel_apply(c, pulse(s, mu=mu)), spad)
        bound = -math.expm1(-mu * eff)
        assert sum(probs.values()) <= bound + 1e-12
        for b_pair in ((H, V), (D, A)):
            assert probs[b_pair[0]] + probs[b_pair[1]] <= r.path_probability(b_pair[0].basis) + 1e-12


class TestSpad:
    def test_dead_time_blocks(self):
        bank = lk.SpadBank(lk.SpadParams(dark_counts_per_s=0.0))
        rng = np.random.default_rng(0)
        ev = bank.detect({H: 1.0}, 0.0, rng, 0) + bank.detect({H: 1.0}, 1000.0, rng, 1)
        assert len(ev) == 1

    def test_dead_time_releases(self):
        bank = lk.SpadBank(lk.SpadParams(dark_counts_per_s=0.0))
        rng = np.random.default_rng(0)
        ev = bank.detect({H: 1.0}, 0.0, rng, 0) + bank.detect({H: 1.0}, 20000.0, rng, 1)
        assert [e.pulse_index for e in ev] == [0, 1]

    def test_out_of_order(self):
        bank = lk.SpadBank(lk.SpadParams())
        rng = np.random.default_rng(0)
        bank.detect({}, 100.0, rng)
        with pytest.raises(lk.SequencingError):
            bank.detect({}, 50.0, rng)

    def test_saturation_rate(self):
        # one pulse per 100 ns, always clicking, 15 us dead time
        times = np.arange(0.0, 1e9, 100.0)
        kept = lk.dead_time_mask(times, 15000.0)
        rate = kept.sum() / 1.0
        assert rate == pytest.approx(1 / 15e-6, rel=0.01)

    def test_bank_saturation(self):
        bank = lk.SpadBank(lk.SpadParams(dark_counts_per_s=0.0))
        rng = np.random.default_rng(0)
        n = 0
        for i in range(200000):
            n += len(bank.detect({H: 1.0}, i * 100.0, rng, i))
        assert n / 0.02 == pytest.approx(66_667, rel=0.01)

    def test_bank_matches_mask(self):
        rng = np.random.default_rng(4)
        times = np.cumsum(rng.exponential(5000.0, 3000))
        bank = lk.SpadBank(lk.SpadParams(dark_counts_per_s=0.0))
        got = []
        for i, t in enumerate(times):
            got += [e.time_ns for e in bank.detect({H: 1.0}, float(t), rng, i)]
        expected = times[lk.dead_time_mask(times, 15000.0)]
        assert got == pytest.approx(list(expected))

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1e6), max_size=300), st.floats(0, 5e4))
    def test_dead_time_invariant(self, raw, dead):
        t = np.sort(np.array(raw))
        kept = t[lk.dead_time_mask(t, dead)]
        assert np.all(np.diff(kept) >= dead)
        if len(t):
            assert kept[0] == t[0]

    def test_dark_counts(self):
        bank = lk.SpadBank(lk.SpadParams(dark_counts_per_s=1e5, dead_time_us=0.0))
        rng = np.random.default_rng(8)
        ev = []
        for i in range(1, 1001):
            ev += bank.detect({}, i * 1e6, rng)
        assert all(e.pulse_index is None for e in ev)
        # 4 detectors x 1e5/s x 1 s
        assert len(ev) == pytest.approx(4e5, rel=0.01)
        for d in STATES:
            t = [e.time_ns for e in ev if e.detector is d]
            assert all(b > a for a, b in zip(t, t[1:]))

    def test_spad_detect_wrapper(self):
        bank = lk.SpadBank(IDEAL_SPAD)
        ev = lk.spad_detect({V: 1.0}, 5.0, bank, np.random.default_rng(0), 9)
        assert ev == [lk.DetectionEvent(V, 5.0, 9)]

    def test_dark_times(self):
        t = lk.dark_count_times(1e6, 0.0, 1e9, np.random.default_rng(1))
        assert np.all(np.diff(t) >= 0)
        assert len(t) == pytest.approx(1e6, rel=0.01)
        assert len(lk.dark_count_times(0.0, 0.0, 1e9, np.random.default_rng(1))) == 0


class TestTia:
    def test_empty(self):
        bins, counts = lk.tia_histogram([], 1.0, period_ns=10.0)
        assert counts.tolist() == [0] * 10
        assert lk.tia_histogram([], 1.0)[1].size == 0

    def test_two_events(self):
        bins, counts = lk.tia_histogram([0.5, 1.5], 1.0)
        assert counts.tolist() == [1, 1]
        assert bins.tolist() == [0.0, 1.0]

    @given(st.lists(st.floats(0, 1e5), max_size=200), st.floats(0.1, 50))
    def test_conservation(self, t, b):
        assert lk.tia_histogram(t, b)[1].sum() == len(t)
        assert lk.tia_histogram(t, b, period_ns=200.0)[1].sum() == len(t)

    def test_bad_bin(self):
        with pytest.raises(ValueError):
            lk.tia_histogram([1.0], 0.0)

    def test_slots(self):
        burst, pp = 1e9 / 9.71e3, 100.0
        t = np.array([0.3, 100.9, 150.0, 99_900.0, burst - 0.5, burst + 200.2])
        got = lk.assign_pulse_slots(t, burst, pp, 1000, 2.0)
        assert got.tolist() == [0, 1, -1, 999, 1000, 1002]
