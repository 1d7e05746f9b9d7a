'''
AWGN and cross-technology interference (CTI) channel for symbol-aligned
LoRa streams.

Interference is modelled statistically: each burst is Gaussian noise
shaped to the bandwidth class of its technology (Wi-Fi covers the whole
LoRa band, ZigBee a quarter of it, Bluetooth a twentieth), arriving as
a Poisson process. Only power, duration and bandwidth matter to the
receiver, so no protocol waveform is generated.

Example:
    >>> params = LoraParams(sf=10)
    >>> traffic = TrafficModel.from_preset('high')
    >>> channel = Channel(ChannelConfig(snr_db=-10.0, traffic=traffic, seed=7))
    >>> out = channel.transmit(modulate([513, 7, 1000], params))
    >>> out.samples.shape, out.mask.dtype
    ((3072,), dtype('bool'))
'''

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from errors import ConfigInvalid
from lora_phy import DEFAULT_BW_HZ


logger = logging.getLogger(__name__)

DEFAULT_INR_DB = 10.0
# share of bursts from nearby transmitters and their extra INR range
NEAR_FRACTION = 0.025
NEAR_EXCESS_DB = 30.0
MAX_SEED = 2 ** 64 - 1


class BurstKind(str, Enum):
    WIFI_LIKE = 'wifi_like'
    ZIGBEE_LIKE = 'zigbee_like'
    BLUETOOTH_LIKE = 'bluetooth_like'


# fraction of the LoRa band each burst kind occupies
BAND_FRACTION = {
    BurstKind.WIFI_LIKE: 1.0,
    BurstKind.ZIGBEE_LIKE: 1 / 4,
    BurstKind.BLUETOOTH_LIKE: 1 / 20,
}

# ZigBee frames last longer than Wi-Fi ones, BLE packets are short
DURATION_SCALE = {
    BurstKind.WIFI_LIKE: 1.0,
    BurstKind.ZIGBEE_LIKE: 4.0,
    BurstKind.BLUETOOTH_LIKE: 0.5,
}

# packets per second
TRAFFIC_PRESETS = {
    'none': 0.0,
    'low': 350.0,
    'mid': 1500.0,
    'high': 2600.0,
}

INTERFERENCE_MIXES = {
    'wifi': {BurstKind.WIFI_LIKE: 1.0},
    'zigbee': {BurstKind.ZIGBEE_LIKE: 1.0},
    'bluetooth': {BurstKind.BLUETOOTH_LIKE: 1.0},
    'mixed': {BurstKind.WIFI_LIKE: 0.6, BurstKind.ZIGBEE_LIKE: 0.2, BurstKind.BLUETOOTH_LIKE: 0.2},
}


@dataclass(frozen=True)
class BurstEvent:
    start_chip: int
    duration_chips: int
    inr_db: float
    kind: BurstKind = BurstKind.WIFI_LIKE

    def __post_init__(self):
        if self.start_chip < 0:
            raise ConfigInvalid(f'burst start must be >= 0, got {self.start_chip}')
        if self.duration_chips < 1:
            raise ConfigInvalid(f'burst duration must be >= 1 chip, got {self.duration_chips}')

    @property
    def end_chip(self):
        return self.start_chip + self.duration_chips


@dataclass(frozen=True)
class DurationDistribution:
    '''
    Two-component mixture of log-uniform durations (seconds): most bursts
    are short frames below 0.2 ms, the rest form a tail up to 1 ms.
    '''
    short_mass: float = 0.957
    short_range_s: tuple = (20e-6, 200e-6)
    long_range_s: tuple = (200e-6, 1e-3)

    def __post_init__(self):
        if not 0.0 <= self.short_mass <= 1.0:
            raise ConfigInvalid(f'short_mass must be in [0, 1], got {self.short_mass}')
        for low, high in (self.short_range_s, self.long_range_s):
            if not 0 < low < high:
                raise ConfigInvalid(f'duration range must satisfy 0 < low < high, got ({low}, {high})')

    def sample(self, rng, size):
        short = rng.random(size) < self.short_mass
        low = np.where(short, self.short_range_s[0], self.long_range_s[0])
        high = np.where(short, self.short_range_s[1], self.long_range_s[1])
        return low * (high / low) ** rng.random(size)


@dataclass(frozen=True)
class TrafficModel:
    rate_pkts_per_s: float
    duration_dist: DurationDistribution = field(default_factory=DurationDistribution)
    kind_mix: dict = field(default_factory=lambda: dict(INTERFERENCE_MIXES['wifi']))
    inr_db: float = DEFAULT_INR_DB
    near_fraction: float = NEAR_FRACTION
    near_excess_db: float = NEAR_EXCESS_DB

    def __post_init__(self):
        if not self.rate_pkts_per_s >= 0:
            raise ConfigInvalid(f'traffic rate must be >= 0, got {self.rate_pkts_per_s}')
        if not self.kind_mix:
            raise ConfigInvalid('kind_mix needs at least one burst kind')
        weights = np.array(list(self.kind_mix.values()), dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigInvalid(f'kind_mix weights must be >= 0 and sum to 1, got {self.kind_mix}')
        if not 0.0 <= self.near_fraction <= 1.0:
            raise ConfigInvalid(f'near_fraction must be in [0, 1], got {self.near_fraction}')
        if not self.near_excess_db >= 0:
            raise ConfigInvalid(f'near_excess_db must be >= 0, got {self.near_excess_db}')

    def sample_inr(self, rng, size):
        '''Per-burst INR: `inr_db`, plus a uniform excess for the near share.'''
        near = rng.random(size) < self.near_fraction
        return self.inr_db + np.where(near, self.near_excess_db * rng.random(size), 0.0)

    @classmethod
    def from_preset(cls, traffic, interference='wifi', inr_db=DEFAULT_INR_DB, near_fraction=NEAR_FRACTION):
        '''`traffic` is a preset name (none/low/mid/high) or a rate in packets per second.'''
        if isinstance(traffic, str) and traffic in TRAFFIC_PRESETS:
            rate = TRAFFIC_PRESETS[traffic]
        else:
            try:
                rate = float(traffic)
            except (TypeError, ValueError):
                raise ConfigInvalid(f'unknown traffic preset `{traffic}`, '
                                    f'use one of {sorted(TRAFFIC_PRESETS)} or a rate')
        if interference not in INTERFERENCE_MIXES:
            raise ConfigInvalid(f'unknown interference mix `{interference}`, use one of {sorted(INTERFERENCE_MIXES)}')
        return cls(rate_pkts_per_s=rate, kind_mix=dict(INTERFERENCE_MIXES[interference]), inr_db=inr_db,
                   near_fraction=near_fraction)


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    traffic: TrafficModel
    seed: int = 0
    bw_hz: float = DEFAULT_BW_HZ

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ConfigInvalid(f'snr_db must be finite, got {self.snr_db}')
        if int(self.seed) != self.seed or not 0 <= self.seed <= MAX_SEED:
            raise ConfigInvalid(f'seed must be a 64-bit unsigned integer, got {self.seed}')
        if not self.bw_hz > 0:
            raise ConfigInvalid(f'bw_hz must be positive, got {self.bw_hz}')


@dataclass(frozen=True, eq=False)
class ChannelOutput:
    samples: np.ndarray
    mask: np.ndarray
    events: list
    noise_power: float


def noise_power_for(signal, snr_db):
    signal = np.asarray(signal)
    signal_power = float(np.mean(np.abs(signal) ** 2)) if signal.size else 0.0
    return signal_power / 10 ** (snr_db / 10)


def complex_gaussian(rng, size, power=1.0):
    return np.sqrt(power / 2) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def add_awgn(signal, snr_db, rng):
    signal = np.asarray(signal, dtype=np.complex128)
    return signal + complex_gaussian(rng, signal.size, noise_power_for(signal, snr_db))


def gen_traffic(model, horizon_chips, rng, bw_hz=DEFAULT_BW_HZ):
    if horizon_chips < 0:
        raise ConfigInvalid(f'horizon must be >= 0 chips, got {horizon_chips}')
    expected = model.rate_pkts_per_s * horizon_chips / bw_hz
    count = int(rng.poisson(expected)) if expected > 0 else 0
    if count == 0:
        return []

    # Poisson process: uniform arrival times given the count
    starts = np.sort(rng.integers(0, horizon_chips, size=count))
    kinds = list(model.kind_mix)
    weights = np.array([model.kind_mix[kind] for kind in kinds], dtype=float)
    picks = rng.choice(len(kinds), size=count, p=weights / weights.sum())
    scale = np.array([DURATION_SCALE[BurstKind(kinds[i])] for i in picks])
    durations = np.maximum(1, np.rint(model.duration_dist.sample(rng, count) * scale * bw_hz)).astype(np.int64)
    inrs = model.sample_inr(rng, count)

    events = [
        BurstEvent(int(start), int(duration), float(inr), BurstKind(kinds[pick]))
        for start, duration, inr, pick in zip(starts, durations, inrs, picks)
    ]
    logger.debug('generated %d bursts over %d chips', len(events), horizon_chips)
    return events


def render_burst(event, rng, noise_power=1.0):
    power = noise_power * 10 ** (event.inr_db / 10)
    length = event.duration_chips
    fraction = BAND_FRACTION[BurstKind(event.kind)]
    if fraction >= 1.0:
        return complex_gaussian(rng, length, power)

    # random contiguous block of bins, shaped in the frequency domain
    width = max(1, int(round(fraction * length)))
    first = int(rng.integers(0, length))
    spectrum = np.zeros(length, dtype=np.complex128)
    spectrum[(first + np.arange(width)) % length] = complex_gaussian(rng, width)
    return np.fft.ifft(spectrum, norm='ortho') * np.sqrt(power * length / width)


def mix(lora, bursts):
    '''
    Add rendered bursts onto `lora` at their offsets (clipped to the stream).
    Returns (samples, ground-truth corruption mask).
    '''
    samples = np.array(lora, dtype=np.complex128)
    mask = np.zeros(samples.size, dtype=bool)
    for event, burst in bursts:
        start = event.start_chip
        if start >= samples.size:
            continue
        burst = np.asarray(burst)[:samples.size - start]
        end = start + burst.size
        samples[start:end] += burst
        mask[start:end] |= burst != 0
    return samples, mask


class Channel:
    '''One seeded channel instance; owns its generator, not safe to share across threads.'''

    def __init__(self, config, rng=None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)

    def transmit(self, signal):
        signal = np.asarray(signal, dtype=np.complex128)
        noise_power = noise_power_for(signal, self.config.snr_db)
        noisy = signal + complex_gaussian(self.rng, signal.size, noise_power)
        events = gen_traffic(self.config.traffic, signal.size, self.rng, self.config.bw_hz)
        bursts = [(event, render_burst(event, self.rng, noise_power)) for event in events]
        samples, mask = mix(noisy, bursts)
        return ChannelOutput(samples=samples, mask=mask, events=events, noise_power=noise_power)
