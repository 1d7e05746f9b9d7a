'''
Noise-only calibration of the PSR thresholds.

For every spreading factor two numbers are learnt from buffers of pure
complex Gaussian noise (the pipeline is scale invariant, so the noise
power does not matter):

- per window length, the clean-slot threshold: a high percentile of the
  per-slot maximum of the normalised STFT grid. Under noise alone the
  strongest component of a slot clears it with probability
  1 - percentile/100, whatever bin the bright line lands on.
- the fast-path bound: a high percentile of the peak-to-mean ratio of
  the plain N-point FFT magnitude.

Tables are stored as JSON:

    {"format": "psr-calibration", "version": 1, "percentile": 99.9,
     "fast_path_percentile": 99.9, "trials": 200, "seed": 0,
     "thresholds": [{"sf": 10, "window_len": 512, "threshold": ...}, ...],
     "fast_path": [{"sf": 10, "bound": ...}, ...]}
'''

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from channel import complex_gaussian
from errors import CalibrationError, ConfigInvalid, IoError
from lora_phy import LoraParams
from psr_core import DEFAULT_WINDOW_COUNT, default_windows, norm_grid


logger = logging.getLogger(__name__)

FORMAT = 'psr-calibration'
VERSION = 1
DEFAULT_TRIALS = 200
DEFAULT_PERCENTILE = 99.9
DEFAULT_FAST_PATH_PERCENTILE = 99.9
MIN_FAST_PATH_TRIALS = 1000


def calibration_windows(params):
    # a superset of every window ladder the harness builds (2..8 windows)
    return default_windows(params, count=max(8, DEFAULT_WINDOW_COUNT))


@dataclass
class CalibrationTable:
    thresholds: dict = field(default_factory=dict)
    fast_path: dict = field(default_factory=dict)
    percentile: float = DEFAULT_PERCENTILE
    fast_path_percentile: float = DEFAULT_FAST_PATH_PERCENTILE
    trials: int = DEFAULT_TRIALS
    seed: int = 0

    def threshold(self, sf, window_len):
        try:
            return self.thresholds[(int(sf), int(window_len))]
        except KeyError:
            raise CalibrationError(f'no threshold calibrated for sf={sf}, window_len={window_len}')

    def thresholds_for(self, sf, window_lens):
        return {length: self.threshold(sf, length) for length in window_lens}

    def fast_path_bound(self, sf):
        try:
            return self.fast_path[int(sf)]
        except KeyError:
            raise CalibrationError(f'no fast-path bound calibrated for sf={sf}')

    @property
    def sf_list(self):
        return sorted(self.fast_path)

    def covers(self, sf, window_lens=()):
        return int(sf) in self.fast_path and all((int(sf), int(length)) in self.thresholds for length in window_lens)

    def merge(self, other):
        self.thresholds.update(other.thresholds)
        self.fast_path.update(other.fast_path)

    def to_json(self):
        document = {
            'format': FORMAT,
            'version': VERSION,
            'percentile': self.percentile,
            'fast_path_percentile': self.fast_path_percentile,
            'trials': self.trials,
            'seed': self.seed,
            'thresholds': [
                {'sf': sf, 'window_len': length, 'threshold': value}
                for (sf, length), value in sorted(self.thresholds.items())
            ],
            'fast_path': [{'sf': sf, 'bound': value} for sf, value in sorted(self.fast_path.items())],
        }
        return json.dumps(document, indent=2)

    @classmethod
    def from_json(cls, text):
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise CalibrationError(f'calibration file is not valid JSON: {e}')
        if not isinstance(document, dict) or document.get('format') != FORMAT:
            raise CalibrationError(f'not a {FORMAT} document')
        if document.get('version') != VERSION:
            raise CalibrationError(f'unsupported calibration version {document.get("version")}, expected {VERSION}')
        try:
            return cls(
                thresholds={(int(row['sf']), int(row['window_len'])): float(row['threshold'])
                            for row in document['thresholds']},
                fast_path={int(row['sf']): float(row['bound']) for row in document['fast_path']},
                percentile=float(document['percentile']),
                fast_path_percentile=float(document['fast_path_percentile']),
                trials=int(document['trials']),
                seed=int(document['seed']),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise CalibrationError(f'malformed calibration table: {e!r}')


def calibrate_sf(sf, windows, trials=DEFAULT_TRIALS, seed=0,
                 percentile=DEFAULT_PERCENTILE, fast_path_percentile=DEFAULT_FAST_PATH_PERCENTILE):
    '''Calibrate one spreading factor. Returns ({window_len: threshold}, fast-path bound).'''
    if trials < 1:
        raise ConfigInvalid(f'trials must be >= 1, got {trials}')
    params = LoraParams(sf=sf)
    n = params.n_chips
    # one stream per sf so adding an sf never shifts the others
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(sf)]))

    samples = {cfg.window_len: [] for cfg in windows}
    for _ in range(trials):
        noise = complex_gaussian(rng, n)
        for cfg in windows:
            samples[cfg.window_len].append(norm_grid(noise, cfg, params).norm.max(axis=1))
    thresholds = {
        length: float(np.percentile(np.concatenate(values), percentile))
        for length, values in samples.items()
    }

    fast_trials = max(trials * 16, MIN_FAST_PATH_TRIALS)
    spectra = np.abs(np.fft.fft(complex_gaussian(rng, (fast_trials, n)), axis=1))
    ratios = spectra.max(axis=1) / spectra.mean(axis=1)
    bound = float(np.percentile(ratios, fast_path_percentile))
    logger.info('calibrated sf=%d over %d trials: fast-path bound %.3f', sf, trials, bound)
    return thresholds, bound


def _sf_table(sf, windows, trials, seed, percentile, fast_path_percentile):
    thresholds, bound = calibrate_sf(sf, windows, trials, seed, percentile, fast_path_percentile)
    return CalibrationTable(
        thresholds={(int(sf), length): value for length, value in thresholds.items()},
        fast_path={int(sf): bound},
        percentile=percentile,
        fast_path_percentile=fast_path_percentile,
        trials=trials,
        seed=seed,
    )


def build_calibration(sf_list, windows_for=calibration_windows, trials=DEFAULT_TRIALS, seed=0,
                      percentile=DEFAULT_PERCENTILE, fast_path_percentile=DEFAULT_FAST_PATH_PERCENTILE):
    table = CalibrationTable(percentile=percentile, fast_path_percentile=fast_path_percentile,
                             trials=trials, seed=seed)
    for sf in sf_list:
        table.merge(_sf_table(sf, windows_for(LoraParams(sf=sf)), trials, seed, percentile, fast_path_percentile))
    return table


def save_calibration(table, path):
    try:
        with open(path, 'w') as f:
            f.write(table.to_json())
    except OSError as e:
        raise IoError(path, e.strerror or str(e))


def load_calibration(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise IoError(path, e.strerror or str(e))
    return CalibrationTable.from_json(text)


class CalibrationCache:
    '''
    Calibration table that fills in missing spreading factors on first
    use. After warm() it is read-only and safe to hand to worker
    processes.
    '''

    def __init__(self, table=None, windows_for=calibration_windows, trials=DEFAULT_TRIALS, seed=0):
        self.table = table if table is not None else CalibrationTable(trials=trials, seed=seed)
        self.windows_for = windows_for
        self.trials = trials
        self.seed = seed

    def _ensure(self, sf, window_lens=()):
        if self.table.covers(sf, window_lens):
            return
        logger.warning('calibration missing for sf=%d, building it now (%d trials)', sf, self.trials)
        params = LoraParams(sf=sf)
        windows = list(self.windows_for(params))
        known = {cfg.window_len for cfg in windows}
        windows += [cfg for cfg in default_windows(params, count=16) if cfg.window_len in set(window_lens) - known]
        self.table.merge(_sf_table(sf, windows, self.trials, self.seed,
                                   self.table.percentile, self.table.fast_path_percentile))

    def warm(self, sf_list):
        for sf in sf_list:
            self._ensure(sf)
        return self.table

    def threshold(self, sf, window_len):
        self._ensure(sf, (window_len,))
        return self.table.threshold(sf, window_len)

    def thresholds_for(self, sf, window_lens):
        self._ensure(sf, tuple(window_lens))
        return self.table.thresholds_for(sf, window_lens)

    def fast_path_bound(self, sf):
        self._ensure(sf)
        return self.table.fast_path_bound(sf)
