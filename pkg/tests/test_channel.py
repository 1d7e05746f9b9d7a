import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from channel import (BAND_FRACTION, DEFAULT_INR_DB, BurstEvent, BurstKind, Channel, ChannelConfig,
                     DurationDistribution, TrafficModel, add_awgn, gen_traffic, mix, noise_power_for, render_burst)
from errors import ConfigInvalid
from lora_phy import LoraParams, dechirp, demod_fft, gen_downchirp, gen_upchirp, modulate


class TestAwgn:
    def test_noise_power_matches_snr(self, rng):
        signal = np.ones(100_000, dtype=complex)
        noisy = add_awgn(signal, snr_db=0.0, rng=rng)
        assert np.mean(np.abs(noisy - signal) ** 2) == pytest.approx(1.0, rel=0.03)

    def test_noise_power_for(self):
        assert noise_power_for(np.ones(16), -10.0) == pytest.approx(10.0)
        assert noise_power_for(2 * np.ones(16), 0.0) == pytest.approx(4.0)

    def test_huge_snr_leaves_the_signal(self, rng):
        signal = gen_upchirp(LoraParams(sf=9), 77)
        assert_allclose(add_awgn(signal, snr_db=300.0, rng=rng), signal, rtol=1e-9, atol=0)


class TestTraffic:
    def test_presets(self):
        assert TrafficModel.from_preset('low').rate_pkts_per_s == 350
        assert TrafficModel.from_preset('mid').rate_pkts_per_s == 1500
        assert TrafficModel.from_preset('high').rate_pkts_per_s == 2600
        assert TrafficModel.from_preset('500').rate_pkts_per_s == 500

    def test_unknown_preset_or_mix(self):
        with pytest.raises(ConfigInvalid):
            TrafficModel.from_preset('rush-hour')
        with pytest.raises(ConfigInvalid):
            TrafficModel.from_preset('high', interference='lte')

    def test_invalid_models(self):
        with pytest.raises(ConfigInvalid):
            TrafficModel(rate_pkts_per_s=-1)
        with pytest.raises(ConfigInvalid):
            TrafficModel(rate_pkts_per_s=10, kind_mix={BurstKind.WIFI_LIKE: 0.5})
        with pytest.raises(ConfigInvalid):
            DurationDistribution(short_mass=1.5)
        with pytest.raises(ConfigInvalid):
            TrafficModel(rate_pkts_per_s=10, near_fraction=1.2)
        with pytest.raises(ConfigInvalid):
            TrafficModel(rate_pkts_per_s=10, near_excess_db=-3.0)

    def test_zero_rate_has_no_events(self, rng):
        assert gen_traffic(TrafficModel(rate_pkts_per_s=0), 10 ** 6, rng) == []

    def test_high_traffic_count(self, rng):
        bw = 812.5e3
        horizon = int(10 * bw)
        events = gen_traffic(TrafficModel.from_preset('high'), horizon, rng, bw_hz=bw)
        assert len(events) == pytest.approx(26_000, rel=0.05)
        starts = np.array([e.start_chip for e in events])
        assert np.all(np.diff(starts) >= 0)
        assert starts.min() >= 0 and starts.max() < horizon

    def test_duration_mixture(self, rng):
        bw = 812.5e3
        events = gen_traffic(TrafficModel.from_preset('high'), int(10 * bw), rng, bw_hz=bw)
        durations = np.array([e.duration_chips for e in events])
        assert durations.min() >= 16
        assert durations.max() <= int(np.ceil(1e-3 * bw))
        short = durations <= 163
        assert np.mean(short) == pytest.approx(0.957, abs=0.01)
        # log-uniform: the median sits at the geometric mean of 20 and 200 us
        assert np.median(durations[short]) == pytest.approx(np.sqrt(20e-6 * 200e-6) * bw, rel=0.05)

    def test_near_bursts(self, rng):
        bw = 812.5e3
        events = gen_traffic(TrafficModel.from_preset('high'), int(10 * bw), rng, bw_hz=bw)
        inrs = np.array([e.inr_db for e in events])
        near = inrs > DEFAULT_INR_DB
        assert np.mean(near) == pytest.approx(0.025, abs=0.005)
        assert inrs.min() == DEFAULT_INR_DB
        assert inrs.max() <= DEFAULT_INR_DB + 30.0
        assert np.median(inrs[near]) == pytest.approx(DEFAULT_INR_DB + 15.0, abs=2.0)

    def test_no_near_bursts(self, rng):
        model = TrafficModel.from_preset('high', inr_db=12.0, near_fraction=0.0)
        assert {e.inr_db for e in gen_traffic(model, 10 ** 6, rng)} == {12.0}

    def test_kind_mix(self, rng):
        model = TrafficModel.from_preset('high', interference='mixed')
        events = gen_traffic(model, int(5 * 812.5e3), rng)
        kinds = [e.kind for e in events]
        assert kinds.count(BurstKind.WIFI_LIKE) / len(kinds) == pytest.approx(0.6, abs=0.03)
        assert set(kinds) == set(BurstKind)


class TestBursts:
    def test_event_validation(self):
        with pytest.raises(ConfigInvalid):
            BurstEvent(start_chip=-1, duration_chips=10, inr_db=10)
        with pytest.raises(ConfigInvalid):
            BurstEvent(start_chip=0, duration_chips=0, inr_db=10)

    def test_wideband_power(self, rng):
        burst = render_burst(BurstEvent(0, 100_000, inr_db=20.0), rng, noise_power=0.5)
        assert np.mean(np.abs(burst) ** 2) == pytest.approx(50.0, rel=0.05)

    @pytest.mark.parametrize('kind', [BurstKind.ZIGBEE_LIKE, BurstKind.BLUETOOTH_LIKE])
    def test_narrowband_occupancy_and_power(self, kind, rng):
        length = 20_000
        burst = render_burst(BurstEvent(0, length, inr_db=10.0, kind=kind), rng, noise_power=1.0)
        spectrum = np.abs(np.fft.fft(burst))
        occupied = np.count_nonzero(spectrum > 1e-6 * spectrum.max())
        assert occupied == round(BAND_FRACTION[kind] * length)
        assert np.mean(np.abs(burst) ** 2) == pytest.approx(10.0, rel=0.1)

    def test_wideband_spectrum_is_flat(self, rng):
        length = 1024
        spectra = [np.abs(np.fft.fft(render_burst(BurstEvent(0, length, inr_db=10.0), rng)))
                   for _ in range(100)]
        average = np.mean(spectra, axis=0)
        assert average.max() / average.mean() < 3

    def test_negligible_burst_keeps_the_symbol(self, rng):
        params = LoraParams(sf=10)
        tx = gen_upchirp(params, 300)
        event = BurstEvent(0, params.n_chips, inr_db=-300.0)
        rx, _ = mix(tx, [(event, render_burst(event, rng))])
        assert demod_fft(dechirp(rx, gen_downchirp(params)))[0] == 300


class TestMix:
    def test_mask_marks_burst_extent(self, rng):
        lora = np.ones(1024, dtype=complex)
        event = BurstEvent(start_chip=176, duration_chips=458, inr_db=10.0)
        burst = render_burst(event, rng)
        samples, mask = mix(lora, [(event, burst)])
        assert_array_equal(np.flatnonzero(mask), np.arange(176, 634))
        assert_allclose(samples[176:634], 1 + burst)
        assert_array_equal(samples[:176], 1)

    def test_burst_clipped_at_stream_end(self, rng):
        lora = np.zeros(100, dtype=complex)
        event = BurstEvent(start_chip=90, duration_chips=50, inr_db=0.0)
        samples, mask = mix(lora, [(event, render_burst(event, rng))])
        assert mask[90:].all() and not mask[:90].any()
        assert samples.shape == (100,)

    def test_burst_past_the_end_is_ignored(self, rng):
        event = BurstEvent(start_chip=500, duration_chips=20, inr_db=0.0)
        _, mask = mix(np.zeros(100), [(event, render_burst(event, rng))])
        assert not mask.any()


class TestChannel:
    def test_same_seed_same_output(self):
        params = LoraParams(sf=10)
        signal = modulate([513, 7, 1000], params)
        config = ChannelConfig(snr_db=-10.0, traffic=TrafficModel.from_preset('high'), seed=7)
        first = Channel(config).transmit(signal)
        second = Channel(config).transmit(signal)
        assert_array_equal(first.samples, second.samples)
        assert_array_equal(first.mask, second.mask)
        assert first.samples.shape == (3072,)

    def test_different_seeds_differ(self):
        signal = modulate([1, 2], LoraParams(sf=8))
        traffic = TrafficModel.from_preset('none')
        a = Channel(ChannelConfig(snr_db=0.0, traffic=traffic, seed=1)).transmit(signal)
        b = Channel(ChannelConfig(snr_db=0.0, traffic=traffic, seed=2)).transmit(signal)
        assert not np.allclose(a.samples, b.samples)
        assert not a.mask.any()

    def test_mask_agrees_with_events(self):
        params = LoraParams(sf=10)
        signal = modulate(np.zeros(50, dtype=int), params)
        out = Channel(ChannelConfig(snr_db=-10.0, traffic=TrafficModel.from_preset('high'), seed=3)).transmit(signal)
        expected = np.zeros(signal.size, dtype=bool)
        for event in out.events:
            expected[event.start_chip:event.end_chip] = True
        assert_array_equal(out.mask, expected)
        assert out.noise_power == pytest.approx(10.0)

    @pytest.mark.parametrize('seed', [-1, 2 ** 64, 1.5])
    def test_seed_validation(self, seed):
        with pytest.raises(ConfigInvalid):
            ChannelConfig(snr_db=0.0, traffic=TrafficModel.from_preset('low'), seed=seed)
