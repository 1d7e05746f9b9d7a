'''
Partial Symbol Recovery (PSR) pipeline.

Stage 1, coarse-grained symbol location: the dechirped symbol goes through
an STFT with Hann windows of several sizes. Each spectrogram is max-pooled
along frequency, turned into a per-slot component-to-sum ratio and
normalised by its window length. Summing the normalised grids locates the
"bright line", the frequency track of the LoRa symbol.

Stage 2, fine-grained detection: slots whose bright-line value clears the
calibrated threshold (and where the line dominates the slot) mark their
chips clean. Largest windows go first and the search stops once enough
chips are clean to recover the symbol. Chip powers seen through the
smallest window trim each accepted core to its quiet chips and extend it
along the quiet runs it touches. The symbol is then recovered by
correlating only the clean chips with the downchirp.

Thresholds come from a calibration table (see calibration.py); any object
with `thresholds_for(sf, window_lens)` and `fast_path_bound(sf)` works.

Work per symbol is O(sum over windows of (N - l)/hop * N log N); with
hop = 1 that is O(N^2 log N).
'''

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import maximum_filter1d
from scipy.signal import get_window

from errors import ConfigInvalid, LengthMismatch
from lora_phy import dechirp, demod_fft, gen_downchirp


logger = logging.getLogger(__name__)

DEFAULT_WINDOW_COUNT = 6
MIN_WINDOW_LEN = 16
HOP_DIVISOR = 4
DEFAULT_MARGIN_DB = 6.0
DEFAULT_SNR_DB = -10.0
# a slot that beats its threshold by this factor overrides the large-window floor
FLOOR_OVERRIDE = 2.0
# a smallest-window slot this many times the reference power is loud
QUIET_FACTOR = 2.5
PLATEAU_RTOL = 1e-9


@dataclass(frozen=True)
class StftConfig:
    window_len: int
    hop: int
    fft_len: int

    def __post_init__(self):
        if not 1 <= self.window_len <= self.fft_len:
            raise ConfigInvalid(f'window_len must be in [1, {self.fft_len}], got {self.window_len}')
        if not 1 <= self.hop <= self.window_len:
            raise ConfigInvalid(f'hop must be in [1, window_len={self.window_len}], got {self.hop}')

    @property
    def n_slots(self):
        return (self.fft_len - self.window_len) // self.hop + 1

    @property
    def slot_starts(self):
        return np.arange(self.n_slots) * self.hop

    @property
    def slot_centers(self):
        return self.slot_starts + self.window_len // 2

    @property
    def window(self):
        return _hann(self.window_len)

    def slot_bounds(self, slot):
        start = int(slot) * self.hop
        return start, start + self.window_len

    def core_bounds(self, start):
        # chips where the Hann weight is at least 1/2
        quarter = self.window_len // 4
        return start + quarter, start + self.window_len - quarter


@lru_cache(maxsize=None)
def _hann(window_len):
    # l non-zero taps: drop the zero end points of an (l + 2)-point Hann
    window = get_window('hann', window_len + 2, fftbins=False)[1:-1]
    window.setflags(write=False)
    return window


@dataclass(frozen=True, eq=False)
class Spectrogram:
    values: np.ndarray
    config: StftConfig

    @property
    def slot_centers(self):
        return self.config.slot_centers


@dataclass(frozen=True, eq=False)
class PooledGrid:
    values: np.ndarray
    pool_len: int
    config: StftConfig


@dataclass(frozen=True, eq=False)
class NormGrid:
    ratio: np.ndarray
    config: StftConfig
    norm: np.ndarray = None
    window_len: int = None

    def __post_init__(self):
        if self.window_len is None:
            object.__setattr__(self, 'window_len', self.config.window_len)


@dataclass(frozen=True, eq=False)
class CleanChipMask:
    clean: np.ndarray
    source_windows: dict = field(default_factory=dict)

    @property
    def clean_count(self):
        return int(np.count_nonzero(self.clean))


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    symbol: int
    peak_magnitude: float
    clean_count: int
    succeeded: bool
    fast_path: bool = False
    line_bin: int = None
    mask: CleanChipMask = None
    peak_ratio: float = None


# ---------------------------------------------------------------------------
# stage 1: coarse-grained symbol location

def stft_hann(dechirped, cfg):
    x = np.asarray(dechirped)
    if x.ndim != 1 or x.size != cfg.fft_len:
        raise ConfigInvalid(f'STFT expects {cfg.fft_len} chips, got shape {x.shape}')
    frames = sliding_window_view(x, cfg.window_len)[::cfg.hop]
    # zero-padded to fft_len so bins line up across window sizes
    values = np.abs(np.fft.fft(frames * cfg.window, n=cfg.fft_len, axis=1))
    return Spectrogram(values=values, config=cfg)


def max_pool_freq(spec, l_pool):
    if int(l_pool) != l_pool or l_pool < 1 or l_pool % 2 == 0:
        raise ConfigInvalid(f'pool length must be an odd integer >= 1, got {l_pool}')
    # 'nearest' padding repeats edge values, same as clamping the neighbourhood
    values = maximum_filter1d(spec.values, size=int(l_pool), axis=1, mode='nearest')
    return PooledGrid(values=values, pool_len=int(l_pool), config=spec.config)


def component_ratio(pooled):
    values = pooled.values
    sums = values.sum(axis=1, keepdims=True)
    degenerate = sums[:, 0] <= 0
    ratio = np.empty_like(values, dtype=float)
    if np.any(degenerate):
        logger.warning('%d all-zero STFT rows, emitting uniform ratios', int(degenerate.sum()))
        ratio[degenerate] = 1.0 / values.shape[1]
    live = ~degenerate
    ratio[live] = values[live] / sums[live]
    return NormGrid(ratio=ratio, config=pooled.config)


def normalize(grid, window_len=None):
    window_len = grid.config.window_len if window_len is None else window_len
    if window_len < 1:
        raise ConfigInvalid(f'window_len must be >= 1, got {window_len}')
    return replace(grid, norm=grid.ratio / window_len, window_len=window_len)


def default_windows(params, count=DEFAULT_WINDOW_COUNT, hop=None, min_window=MIN_WINDOW_LEN):
    '''
    Geometric ladder N/2, N/4, ... of `count` Hann windows, clamped to
    `min_window` chips. Clamped duplicates are dropped; the smallest
    remaining window then slides with half its hop.
    '''
    if count < 1:
        raise ConfigInvalid(f'window count must be >= 1, got {count}')
    n = params.n_chips
    lengths = []
    for k in range(1, count + 1):
        length = min(n, max(min_window, n >> k))
        if length not in lengths:
            lengths.append(length)

    configs = [StftConfig(length, _hop_for(length, hop), n) for length in lengths]
    if len(lengths) < count and hop is None:
        configs[-1] = replace(configs[-1], hop=max(1, configs[-1].hop // 2))
    return configs


def _hop_for(window_len, hop):
    if hop is None:
        return max(1, window_len // HOP_DIVISOR)
    return min(int(hop), window_len)


def _pool_len(window_len, n_chips):
    # odd integer nearest 4N/l (Hann main lobe in bins), ties go up
    width = 4 * n_chips / window_len
    return max(3, 2 * int(math.floor(width / 2)) + 1)


def pool_len_for(window_len, params):
    if window_len < 1:
        raise ConfigInvalid(f'window_len must be >= 1, got {window_len}')
    return _pool_len(window_len, params.n_chips)


def norm_grid(dechirped, cfg, params):
    spec = stft_hann(dechirped, cfg)
    pooled = max_pool_freq(spec, pool_len_for(cfg.window_len, params))
    return normalize(component_ratio(pooled), cfg.window_len)


def stft_stages(rx, params, windows):
    '''Every intermediate grid for one received symbol, one tuple per window.'''
    dechirped = dechirp(rx, gen_downchirp(params))
    stages = []
    for cfg in windows:
        spec = stft_hann(dechirped, cfg)
        pooled = max_pool_freq(spec, pool_len_for(cfg.window_len, params))
        grid = normalize(component_ratio(pooled), cfg.window_len)
        stages.append((cfg, spec, pooled, grid))
    return stages


def _plateau(values):
    # pooling flattens the peak; find the run of maxima around the argmax
    best = int(np.argmax(values))
    floor = values[best] - abs(values[best]) * PLATEAU_RTOL
    low = best
    while low > 0 and values[low - 1] >= floor:
        low -= 1
    high = best
    while high < len(values) - 1 and values[high + 1] >= floor:
        high += 1
    return low, high


def _resolve(values, spectrum=None, offset=0):
    low, high = _plateau(values)
    if spectrum is None:
        return offset + (low + high) // 2
    # strongest full-symbol bin on the plateau
    return offset + low + int(np.argmax(spectrum[offset + low:offset + high + 1]))


def locate_bright_line(norms, thresholds=None, spectrum=None):
    '''
    Coarse estimate: argmax over bins of the normalised grids summed over
    windows and slots, then refined window by window from the smallest to
    the largest, each searching only inside the pooling neighbourhood left
    by the previous one.

    With `thresholds` ({window_len: theta}) only slots whose strongest
    component clears theta carry evidence, and the line is read from the
    largest window holding such a slot. Without any such slot the
    unthresholded estimate is returned.

    Pooled plateaus resolve to their middle bin, or to the strongest bin
    of `spectrum` (full-symbol FFT magnitudes) when given.
    '''
    if not norms:
        raise ConfigInvalid('locate_bright_line needs at least one grid')
    if thresholds is not None:
        for grid in sorted(norms, key=lambda grid: -grid.window_len):
            voting = grid.norm[grid.norm.max(axis=1) >= thresholds[grid.window_len]]
            if len(voting):
                return int(_resolve(voting.sum(axis=0), spectrum))

    n = norms[0].norm.shape[1]
    center = _resolve(sum(grid.norm.sum(axis=0) for grid in norms), spectrum)
    ordered = sorted(norms, key=lambda grid: grid.window_len)
    radius = _pool_len(ordered[0].window_len, n)
    for grid in ordered:
        low, high = max(0, center - radius), min(n, center + radius + 1)
        center = _resolve(grid.norm[:, low:high].sum(axis=0), spectrum, offset=low)
        radius = _pool_len(grid.window_len, n)
    return int(center)


# ---------------------------------------------------------------------------
# stage 2: fine-grained symbol detection

def slot_power(power, cfg):
    '''Hann-weighted mean chip power of every slot of `cfg`.'''
    taps = cfg.window ** 2
    frames = sliding_window_view(np.asarray(power, dtype=float), cfg.window_len)[::cfg.hop]
    return frames @ taps / taps.sum()


def _core_edges(cfg, n):
    starts = cfg.slot_starts
    quarter = cfg.window_len // 4
    lows = np.where(starts == 0, 0, starts + quarter)
    highs = np.where(starts + cfg.window_len == n, n, starts + cfg.window_len - quarter)
    return lows, highs


def quiet_chips(power, cfg, reference, factor=QUIET_FACTOR):
    '''
    Chips covered by the core of at least one slot of `cfg` and by no
    core whose slot power reaches `factor` times `reference`.
    '''
    n = cfg.fft_len
    loud = slot_power(power, cfg) >= factor * reference
    lows, highs = _core_edges(cfg, n)
    covered = np.zeros(n + 1)
    noisy = np.zeros(n + 1)
    np.add.at(covered, lows, 1)
    np.add.at(covered, highs, -1)
    np.add.at(noisy, lows[loud], 1)
    np.add.at(noisy, highs[loud], -1)
    return (np.cumsum(covered)[:n] > 0) & (np.cumsum(noisy)[:n] == 0)


def _reference_power(power, cfg, low, high):
    starts = cfg.slot_starts
    inside = (starts >= low) & (starts + cfg.window_len <= high)
    if inside.any():
        return float(np.median(slot_power(power, cfg)[inside]))
    return float(np.mean(power[low:high]))


def _grow(seed, quiet):
    # quiet runs that share a chip with the seed
    runs = np.cumsum(~quiet)
    touched = np.unique(runs[seed & quiet])
    return quiet & np.isin(runs, touched)


def identify_clean_chips(norms, line_bin, params, thresholds=None, stop_at=None, collect_all=False, power=None):
    '''
    Walk windows from largest to smallest and, inside each, slots in
    descending order of their bright-line value. A slot is accepted when
    that value clears the window's threshold and the line is the
    dominating component of the slot; it then marks its core (Hann weight
    >= 1/2) clean. Slots of the smallest window that touch a symbol edge
    mark through to that edge.

    Chips rejected by the largest window with an accepted slot form a
    floor: smaller windows only re-add them with a value of at least
    FLOOR_OVERRIDE times their threshold.

    With per-chip `power`, an accepted core is trimmed to its quiet chips
    and grown along the quiet runs it touches. Quiet is judged on the
    smallest window against the median slot power inside the first
    accepted core.

    The walk stops once `stop_at` chips are clean, by default the
    recovery threshold at DEFAULT_SNR_DB; `collect_all` visits every slot.
    '''
    n = params.n_chips
    if not 0 <= line_bin < n:
        raise ConfigInvalid(f'line_bin must be in [0, {n}), got {line_bin}')
    if stop_at is None:
        stop_at = recovery_threshold(DEFAULT_SNR_DB, params)
    if collect_all:
        stop_at = None
    clean = np.zeros(n, dtype=bool)
    sources = {}
    floor = None
    quiet = None
    finest = min(norms, key=lambda grid: grid.window_len).config if norms else None
    if power is not None:
        power = np.asarray(power, dtype=float)
        if power.size != n:
            raise LengthMismatch(f'expected {n} chip powers, got {power.size}')

    for grid in sorted(norms, key=lambda grid: -grid.window_len):
        cfg = grid.config
        theta = 0.0 if thresholds is None else thresholds[grid.window_len]
        column = grid.norm[:, line_bin]
        dominant = column >= grid.norm.max(axis=1) * (1 - PLATEAU_RTOL)
        accepted = np.zeros(n, dtype=bool)
        rejected = np.zeros(n, dtype=bool)
        done = False

        for tau in np.argsort(-column, kind='stable'):
            start, end = cfg.slot_bounds(tau)
            low, high = cfg.core_bounds(start)
            if cfg is finest:
                low = 0 if start == 0 else low
                high = n if end == n else high
            if column[tau] < theta or not dominant[tau]:
                rejected[low:high] = True
                continue
            span = np.zeros(n, dtype=bool)
            span[low:high] = True
            if floor is not None and column[tau] < FLOOR_OVERRIDE * theta:
                span &= ~floor
            if power is not None:
                if quiet is None:
                    quiet = quiet_chips(power, finest, _reference_power(power, finest, low, high))
                span = _grow(span, quiet)
            clean |= span
            accepted |= span
            if stop_at is not None and np.count_nonzero(clean) >= stop_at:
                done = True
                break

        if accepted.any():
            sources[grid.window_len] = accepted
            if floor is None:
                floor = rejected & ~accepted
        if done:
            break

    return CleanChipMask(clean=clean, source_windows=sources)


def recovery_threshold(snr_db, params, margin_db=DEFAULT_MARGIN_DB):
    # coherent gain 10*log10(c) must lift snr_db to the margin
    needed = math.ceil(10 ** ((margin_db - snr_db) / 10))
    return int(min(params.n_chips, max(1, needed)))


def recover_symbol(rx, mask, params, threshold):
    rx = np.asarray(rx)
    if rx.size != params.n_chips:
        raise LengthMismatch(f'expected {params.n_chips} chips, got {rx.size}')
    masked = np.where(mask.clean, rx, 0)
    symbol, magnitudes = demod_fft(dechirp(masked, gen_downchirp(params)))
    clean_count = mask.clean_count
    return RecoveryResult(
        symbol=symbol,
        peak_magnitude=float(magnitudes[symbol]),
        clean_count=clean_count,
        succeeded=clean_count >= threshold,
        mask=mask,
        peak_ratio=peak_to_mean(magnitudes),
    )


def peak_to_mean(magnitudes):
    mean = float(np.mean(magnitudes))
    return float(np.max(magnitudes)) / mean if mean > 0 else 0.0


def psr_demod(rx, params, windows, calibration, snr_db=DEFAULT_SNR_DB, margin_db=DEFAULT_MARGIN_DB,
              collect_all=False):
    '''
    Demodulate one received symbol with PSR.

    Symbols whose plain FFT already shows a dominating peak take the fast
    path and return the standard result. Otherwise clean chips are
    located and correlated; when fewer than the recovery threshold are
    found the standard symbol is kept and the result is flagged failed.
    A recovered symbol that disagrees with the standard one only wins
    when its masked spectrum peaks at least as sharply as the plain one.

    The clean-chip search stops once the threshold is met unless
    `collect_all` is set.
    '''
    rx = np.asarray(rx)
    if rx.size != params.n_chips:
        raise LengthMismatch(f'expected {params.n_chips} chips, got {rx.size}')
    dechirped = dechirp(rx, gen_downchirp(params))
    standard, magnitudes = demod_fft(dechirped)
    standard_ratio = peak_to_mean(magnitudes)
    threshold = recovery_threshold(snr_db, params, margin_db)

    if standard_ratio >= calibration.fast_path_bound(params.sf):
        return RecoveryResult(
            symbol=standard,
            peak_magnitude=float(magnitudes[standard]),
            clean_count=params.n_chips,
            succeeded=True,
            fast_path=True,
            line_bin=standard,
            peak_ratio=standard_ratio,
        )

    thresholds = calibration.thresholds_for(params.sf, [cfg.window_len for cfg in windows])
    norms = [norm_grid(dechirped, cfg, params) for cfg in windows]
    line_bin = locate_bright_line(norms, thresholds, magnitudes)
    mask = identify_clean_chips(norms, line_bin, params, thresholds, stop_at=threshold,
                                collect_all=collect_all, power=np.abs(dechirped) ** 2)
    result = replace(recover_symbol(rx, mask, params, threshold), line_bin=line_bin)
    logger.debug('psr: line=%d clean=%d threshold=%d symbol=%d standard=%d',
                 line_bin, result.clean_count, threshold, result.symbol, standard)
    if not result.succeeded or (result.symbol != standard and result.peak_ratio < standard_ratio):
        result = replace(result, symbol=standard, peak_magnitude=float(magnitudes[standard]))
    return result


def psr_demod_stream(rx, params, windows, calibration, snr_db=DEFAULT_SNR_DB, margin_db=DEFAULT_MARGIN_DB,
                     collect_all=False):
    '''
    PSR over a symbol-aligned stream. Symbols passing the fast-path test
    are settled from one batched FFT, the rest go through psr_demod.
    Returns (symbols, fast-path flags).
    '''
    rx = np.asarray(rx)
    n = params.n_chips
    if rx.size % n:
        raise LengthMismatch(f'stream of {rx.size} samples is not a whole number of {n}-chip symbols')
    frames = rx.reshape(-1, n)
    spectra = np.abs(np.fft.fft(frames * gen_downchirp(params), axis=1))
    symbols = np.argmax(spectra, axis=1)
    means = spectra.mean(axis=1)
    ratios = np.divide(spectra.max(axis=1), means, out=np.zeros(len(frames)), where=means > 0)
    fast = ratios >= calibration.fast_path_bound(params.sf)
    for i in np.flatnonzero(~fast):
        symbols[i] = psr_demod(frames[i], params, windows, calibration, snr_db, margin_db, collect_all).symbol
    return symbols, fast
