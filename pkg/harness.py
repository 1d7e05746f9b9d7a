'''
Monte-Carlo experiment runner and command line for PSR.

Each cell of an experiment is one (sf, snr) pair. For every packet a
random payload is encoded, modulated, passed through the interference
channel and decoded by every selected decoder on the same channel
realisation, so decoders are compared symbol for symbol.

Usage:
    $ python3 harness.py calibrate --sf 7..12 --output calibration.json
    $ python3 harness.py run --sf 10 --snr -10 --traffic high --decoder psr --calibration calibration.json
    $ python3 harness.py run --config sweep.conf --workers 4 --output report.csv
    $ python3 harness.py simulate --sf 10 --snr -10 --traffic high --output trace.iq
    $ python3 harness.py decode trace.iq --calibration calibration.json
    $ python3 harness.py demo --sf 10 --symbol 513 --burst 176:634

Report columns (CSV; JSON rows carry the same keys):
    sf, snr_db, traffic, interference, decoder,
    symbols_total, symbols_corrupted, symbols_recovered, srr,
    packets_total, packets_ok, prr, throughput_kbps,
    clean_fraction_histogram, recovered_histogram

A corrupted symbol is one the channel touched and standard demodulation
got wrong; srr is recovered / corrupted. Both histograms have ten
clean-fraction deciles, written `;`-joined in CSV.

Config files are flat `key = value` lines (`#` comments, comma lists,
`a..b` integer ranges); keys are the long flag names of `run` with `-`
written as `_`. Flags given on the command line win.
'''

import argparse
import asyncio
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from calibration import (DEFAULT_PERCENTILE, DEFAULT_TRIALS, CalibrationCache, build_calibration,
                         load_calibration, save_calibration)
from channel import (DEFAULT_INR_DB, INTERFERENCE_MIXES, NEAR_FRACTION, BurstEvent, Channel, ChannelConfig,
                     TrafficModel, complex_gaussian, mix, noise_power_for, render_burst)
from errors import ConfigInvalid, FramingError, IoError, PsrError
from iq_io import IqFileHeader, read_iq, write_iq
from lora_phy import (DEFAULT_BW_HZ, MAX_PAYLOAD_BYTES, LoraParams, decode_payload, decode_payload_verbose,
                      dechirp, demod_fft, demod_stream, encode_payload, gen_downchirp, gen_upchirp, infer_payload_len,
                      modulate, n_crc_symbols, n_data_symbols)
from psr_core import (DEFAULT_MARGIN_DB, DEFAULT_WINDOW_COUNT, default_windows, locate_bright_line, psr_demod,
                      psr_demod_stream, stft_stages)


logger = logging.getLogger(__name__)

DECODERS = ('standard', 'psr')
FORMATS = ('csv', 'json')
SCHEMA_VERSION = 1
HISTOGRAM_BINS = 10
REPORT_COLUMNS = (
    'sf', 'snr_db', 'traffic', 'interference', 'decoder',
    'symbols_total', 'symbols_corrupted', 'symbols_recovered', 'srr',
    'packets_total', 'packets_ok', 'prr', 'throughput_kbps',
    'clean_fraction_histogram', 'recovered_histogram',
)
INT_COLUMNS = ('sf', 'symbols_total', 'symbols_corrupted', 'symbols_recovered', 'packets_total', 'packets_ok')
FLOAT_COLUMNS = ('snr_db', 'srr', 'prr', 'throughput_kbps')
HISTOGRAM_COLUMNS = ('clean_fraction_histogram', 'recovered_histogram')
SRR_BUCKETS = (('<20%', 0, 2), ('20-40%', 2, 4), ('>40%', 4, HISTOGRAM_BINS))
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    sf_list: tuple = (10,)
    snr_db_list: tuple = (-10.0,)
    traffic: str = 'high'
    interference: str = 'wifi'
    inr_db: float = DEFAULT_INR_DB
    near_fraction: float = NEAR_FRACTION
    payload_len: int = 100
    packets_per_cell: int = 2000
    seed: int = 0
    decoders: tuple = DECODERS
    output_path: str = None
    format: str = 'csv'
    bw_hz: float = DEFAULT_BW_HZ
    windows: int = DEFAULT_WINDOW_COUNT
    hop: int = None
    margin_db: float = DEFAULT_MARGIN_DB
    workers: int = 1
    calibration_path: str = None
    calibration_trials: int = DEFAULT_TRIALS
    osc_ip: str = None
    osc_port: int = 54321

    def __post_init__(self):
        object.__setattr__(self, 'sf_list', tuple(self.sf_list))
        object.__setattr__(self, 'snr_db_list', tuple(float(snr) for snr in self.snr_db_list))
        object.__setattr__(self, 'decoders', tuple(self.decoders))
        if not self.sf_list or not self.snr_db_list or not self.decoders:
            raise ConfigInvalid('sf_list, snr_db_list and decoders must not be empty')
        for sf in self.sf_list:
            LoraParams(sf=sf, bw_hz=self.bw_hz)
        unknown = set(self.decoders) - set(DECODERS)
        if unknown:
            raise ConfigInvalid(f'unknown decoder(s) {sorted(unknown)}, use {DECODERS}')
        if len(set(self.decoders)) != len(self.decoders):
            raise ConfigInvalid(f'duplicate decoders in {self.decoders}')
        if self.packets_per_cell < 1:
            raise ConfigInvalid(f'packets_per_cell must be >= 1, got {self.packets_per_cell}')
        if not 0 <= self.payload_len <= MAX_PAYLOAD_BYTES:
            raise ConfigInvalid(f'payload_len must be in [0, {MAX_PAYLOAD_BYTES}], got {self.payload_len}')
        if self.format not in FORMATS:
            raise ConfigInvalid(f'format must be one of {FORMATS}, got {self.format}')
        if self.windows < 1:
            raise ConfigInvalid(f'windows must be >= 1, got {self.windows}')
        if self.hop is not None and self.hop < 1:
            raise ConfigInvalid(f'hop must be >= 1, got {self.hop}')
        if self.workers < 1:
            raise ConfigInvalid(f'workers must be >= 1, got {self.workers}')
        if self.seed < 0:
            raise ConfigInvalid(f'seed must be >= 0, got {self.seed}')
        # fails early on unknown presets or mixes
        self.traffic_model()

    def traffic_model(self):
        return TrafficModel.from_preset(self.traffic, self.interference, self.inr_db, self.near_fraction)

    @property
    def cells(self):
        return [(sf, snr) for sf in self.sf_list for snr in self.snr_db_list]


def parse_int_list(text):
    values = []
    for item in str(text).split(','):
        item = item.strip()
        if not item:
            continue
        if '..' in item:
            low, high = item.split('..', 1)
            values.extend(range(int(low), int(high) + 1))
        else:
            values.append(int(item))
    return values


def parse_float_list(text):
    values = []
    for item in str(text).split(','):
        item = item.strip()
        if not item:
            continue
        if '..' in item:
            low, high = item.split('..', 1)
            values.extend(float(v) for v in range(int(low), int(high) + 1))
        else:
            values.append(float(item))
    return values


def parse_str_list(text):
    return [item.strip() for item in str(text).split(',') if item.strip()]


def _optional_int(text):
    return None if str(text).lower() in ('', 'none') else int(text)


# config key (== long flag of `run`) -> (ExperimentConfig field, parser)
CONFIG_KEYS = {
    'sf': ('sf_list', parse_int_list),
    'snr': ('snr_db_list', parse_float_list),
    'traffic': ('traffic', str),
    'interference': ('interference', str),
    'inr': ('inr_db', float),
    'near_fraction': ('near_fraction', float),
    'payload_len': ('payload_len', int),
    'packets': ('packets_per_cell', int),
    'seed': ('seed', int),
    'decoder': ('decoders', parse_str_list),
    'output': ('output_path', str),
    'format': ('format', str),
    'bw': ('bw_hz', float),
    'windows': ('windows', int),
    'hop': ('hop', _optional_int),
    'margin': ('margin_db', float),
    'workers': ('workers', int),
    'calibration': ('calibration_path', str),
    'calibration_trials': ('calibration_trials', int),
    'osc_ip': ('osc_ip', str),
    'osc_port': ('osc_port', int),
}


def read_config_file(path):
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise IoError(path, e.strerror or str(e))

    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigInvalid(f'{path}:{lineno}: expected `key = value`, got `{line}`')
        key, value = (part.strip() for part in line.split('=', 1))
        key = key.replace('-', '_')
        if key not in CONFIG_KEYS:
            raise ConfigInvalid(f'{path}:{lineno}: unknown key `{key}`')
        values[key] = value
    return values


def build_config(file_values=None, overrides=None):
    '''Merge raw config-file strings with already parsed flag values (flags win).'''
    kwargs = {}
    for key, raw in (file_values or {}).items():
        name, parse = CONFIG_KEYS[key]
        try:
            kwargs[name] = parse(raw)
        except ValueError:
            raise ConfigInvalid(f'bad value `{raw}` for `{key}`')
    for key, value in (overrides or {}).items():
        if value is not None:
            kwargs[CONFIG_KEYS[key][0]] = value
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# metrics

def throughput(prr, params, payload_bits, time_on_air_s=None):
    '''Goodput in kb/s; time on air defaults to the framed packet length of `payload_bits`.'''
    if time_on_air_s is None:
        payload_len = payload_bits // 8
        time_on_air_s = time_on_air(n_data_symbols(payload_len, params.sf) + n_crc_symbols(params.sf), params)
    if not time_on_air_s > 0:
        raise ConfigInvalid(f'time on air must be positive, got {time_on_air_s}')
    return prr * payload_bits / time_on_air_s / 1000.0


def time_on_air(n_symbols, params):
    return n_symbols * params.n_chips / params.bw_hz


def _decile(clean_fraction):
    return np.minimum((np.asarray(clean_fraction) * HISTOGRAM_BINS).astype(int), HISTOGRAM_BINS - 1)


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([
                ';'.join(str(v) for v in row[column]) if column in HISTOGRAM_COLUMNS else row[column]
                for column in REPORT_COLUMNS
            ])
        return buffer.getvalue()

    def to_json(self):
        document = {
            'schema_version': SCHEMA_VERSION,
            'columns': list(REPORT_COLUMNS),
            'rows': [{column: row[column] for column in REPORT_COLUMNS} for row in self.rows],
        }
        return json.dumps(document, indent=2) + '\n'

    @classmethod
    def from_json(cls, text):
        document = json.loads(text)
        if document.get('schema_version') != SCHEMA_VERSION:
            raise ConfigInvalid(f'unsupported report schema {document.get("schema_version")}')
        return cls(rows=[dict(row) for row in document['rows']])

    @classmethod
    def from_csv(cls, text):
        rows = []
        for raw in csv.DictReader(io.StringIO(text)):
            row = dict(raw)
            for column in INT_COLUMNS:
                row[column] = int(row[column])
            for column in FLOAT_COLUMNS:
                row[column] = float(row[column])
            for column in HISTOGRAM_COLUMNS:
                row[column] = [int(v) for v in row[column].split(';') if v]
            rows.append(row)
        return cls(rows=rows)

    @staticmethod
    def bucket_srr(row):
        '''SRR per clean-fraction bucket (<20 %, 20-40 %, >40 %); None for empty buckets.'''
        corrupted = row['clean_fraction_histogram']
        recovered = row['recovered_histogram']
        buckets = {}
        for name, low, high in SRR_BUCKETS:
            total = sum(corrupted[low:high])
            buckets[name] = sum(recovered[low:high]) / total if total else None
        return buckets

    def select(self, **criteria):
        return [row for row in self.rows if all(row[key] == value for key, value in criteria.items())]

    def summary(self):
        '''Mean PRR and throughput of each decoder over every cell.'''
        summary = {}
        for decoder in dict.fromkeys(row['decoder'] for row in self.rows):
            rows = self.select(decoder=decoder)
            summary[decoder] = {
                'prr': float(np.mean([row['prr'] for row in rows])),
                'throughput_kbps': float(np.mean([row['throughput_kbps'] for row in rows])),
            }
        return summary


def emit_report(report, path, format='csv'):
    if format not in FORMATS:
        raise ConfigInvalid(f'format must be one of {FORMATS}, got {format}')
    text = report.to_csv() if format == 'csv' else report.to_json()
    if path is None or path == '-':
        sys.stdout.write(text)
        return
    try:
        with open(path, 'w', newline='') as f:
            f.write(text)
    except OSError as e:
        raise IoError(path, e.strerror or str(e))
    logger.info('report with %d rows written to %s', len(report.rows), path)


# ---------------------------------------------------------------------------
# experiment

def cell_rng(seed, cell_index):
    # independent of scheduling, so serial and parallel runs agree
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(cell_index)]))


def run_cell(cfg, cell_index, sf, snr_db, calibration=None):
    params = LoraParams(sf=sf, bw_hz=cfg.bw_hz)
    rng = cell_rng(cfg.seed, cell_index)
    channel_cfg = ChannelConfig(snr_db=snr_db, traffic=cfg.traffic_model(), seed=cfg.seed, bw_hz=cfg.bw_hz)
    channel = Channel(channel_cfg, rng=rng)
    windows = default_windows(params, cfg.windows, cfg.hop)

    stats = {
        decoder: {
            'symbols_corrupted': 0,
            'symbols_recovered': 0,
            'packets_ok': 0,
            'recovered_histogram': np.zeros(HISTOGRAM_BINS, dtype=np.int64),
        }
        for decoder in cfg.decoders
    }
    clean_histogram = np.zeros(HISTOGRAM_BINS, dtype=np.int64)
    symbols_total = 0
    n_symbols = 0

    for _ in range(cfg.packets_per_cell):
        payload = rng.integers(0, 256, size=cfg.payload_len, dtype=np.uint8).tobytes()
        sent = encode_payload(payload, params).all_symbols
        n_symbols = sent.size
        out = channel.transmit(modulate(sent, params))

        touched = out.mask.reshape(-1, params.n_chips)
        clean_fraction = 1.0 - touched.mean(axis=1)
        standard, _ = demod_stream(out.samples, params)
        corrupted = touched.any(axis=1) & (standard != sent)
        clean_histogram += np.bincount(_decile(clean_fraction[corrupted]), minlength=HISTOGRAM_BINS)
        symbols_total += sent.size

        for decoder in cfg.decoders:
            if decoder == 'psr':
                decoded, _ = psr_demod_stream(out.samples, params, windows, calibration, snr_db, cfg.margin_db)
            else:
                decoded = standard
            recovered = corrupted & (decoded == sent)
            cell = stats[decoder]
            cell['symbols_corrupted'] += int(np.count_nonzero(corrupted))
            cell['symbols_recovered'] += int(np.count_nonzero(recovered))
            cell['recovered_histogram'] += np.bincount(_decile(clean_fraction[recovered]), minlength=HISTOGRAM_BINS)
            _, crc_ok = decode_payload(decoded, params, cfg.payload_len)
            cell['packets_ok'] += int(crc_ok)

    payload_bits = 8 * cfg.payload_len
    toa = time_on_air(n_symbols, params)
    rows = []
    for decoder in cfg.decoders:
        cell = stats[decoder]
        prr = cell['packets_ok'] / cfg.packets_per_cell
        corrupted = cell['symbols_corrupted']
        rows.append({
            'sf': int(sf),
            'snr_db': float(snr_db),
            'traffic': str(cfg.traffic),
            'interference': cfg.interference,
            'decoder': decoder,
            'symbols_total': symbols_total,
            'symbols_corrupted': corrupted,
            'symbols_recovered': cell['symbols_recovered'],
            'srr': cell['symbols_recovered'] / corrupted if corrupted else 0.0,
            'packets_total': cfg.packets_per_cell,
            'packets_ok': cell['packets_ok'],
            'prr': prr,
            'throughput_kbps': throughput(prr, params, payload_bits, toa),
            'clean_fraction_histogram': [int(v) for v in clean_histogram],
            'recovered_histogram': [int(v) for v in cell['recovered_histogram']],
        })
    logger.info('cell sf=%d snr=%.1f dB: %s', sf, snr_db,
                ', '.join(f"{row['decoder']} prr={row['prr']:.3f} srr={row['srr']:.3f}" for row in rows))
    return rows


def prepare_calibration(cfg):
    if 'psr' not in cfg.decoders:
        return None
    table = load_calibration(cfg.calibration_path) if cfg.calibration_path else None
    cache = CalibrationCache(table, trials=cfg.calibration_trials, seed=cfg.seed)
    for sf in cfg.sf_list:
        params = LoraParams(sf=sf, bw_hz=cfg.bw_hz)
        cache.thresholds_for(sf, [w.window_len for w in default_windows(params, cfg.windows, cfg.hop)])
        cache.fast_path_bound(sf)
    return cache.table


async def run_cells(cfg, calibration):
    cells = list(enumerate(cfg.cells))
    if cfg.workers == 1:
        return [run_cell(cfg, index, sf, snr, calibration) for index, (sf, snr) in cells]
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        tasks = [loop.run_in_executor(pool, run_cell, cfg, index, sf, snr, calibration) for index, (sf, snr) in cells]
        return await asyncio.gather(*tasks)


def run_experiment(cfg, calibration=None):
    if calibration is None:
        calibration = prepare_calibration(cfg)
    logger.info('running %d cells x %d packets (decoders: %s)', len(cfg.cells), cfg.packets_per_cell,
                ', '.join(cfg.decoders))
    results = asyncio.run(run_cells(cfg, calibration))
    return MetricsReport(rows=[row for rows in results for row in rows])


# ---------------------------------------------------------------------------
# command line

def _add_run_flags(parser):
    parser.add_argument('--config', help='flat key = value experiment file')
    parser.add_argument('--sf', type=parse_int_list, help='spreading factors, e.g. 7..12 or 8,10')
    parser.add_argument('--snr', type=parse_float_list, help='SNR values in dB, e.g. --snr=-15,-10')
    parser.add_argument('--traffic', help='none, low, mid, high or a rate in packets/s')
    parser.add_argument('--interference', choices=sorted(INTERFERENCE_MIXES))
    parser.add_argument('--inr', type=float, help='burst power above the noise floor, dB')
    parser.add_argument('--near-fraction', type=float, help='share of bursts with up to 30 dB extra INR')
    parser.add_argument('--payload-len', type=int)
    parser.add_argument('--packets', type=int, help='packets per cell')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--decoder', type=parse_str_list, help='standard, psr or both (comma separated)')
    parser.add_argument('--output', help='report path, stdout when omitted')
    parser.add_argument('--format', choices=FORMATS)
    parser.add_argument('--bw', type=float, help='LoRa bandwidth in Hz')
    parser.add_argument('--windows', type=int, help='number of STFT windows')
    parser.add_argument('--hop', type=int, help='STFT hop for every window')
    parser.add_argument('--margin', type=float, help='detection margin in dB')
    parser.add_argument('--workers', type=int, help='worker processes')
    parser.add_argument('--calibration', help='calibration table, built on the fly when omitted')
    parser.add_argument('--calibration-trials', type=int)
    parser.add_argument('--osc-ip', help='publish finished cells to this OSC server')
    parser.add_argument('--osc-port', type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog='harness.py', description='Partial symbol recovery experiments for LoRa')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='run an experiment sweep and write a report')
    _add_run_flags(run)

    calibrate = sub.add_parser('calibrate', help='build the PSR threshold table')
    calibrate.add_argument('--sf', type=parse_int_list, default=list(range(7, 13)))
    calibrate.add_argument('--trials', type=int, default=DEFAULT_TRIALS)
    calibrate.add_argument('--seed', type=int, default=0)
    calibrate.add_argument('--percentile', type=float, default=DEFAULT_PERCENTILE)
    calibrate.add_argument('--output', default='calibration.json')

    decode = sub.add_parser('decode', help='decode a symbol-aligned iq file')
    decode.add_argument('path')
    decode.add_argument('--decoder', choices=DECODERS + ('both',), default='both')
    decode.add_argument('--snr', type=float, default=-10.0, help='SNR assumed for the recovery threshold')
    decode.add_argument('--margin', type=float, default=DEFAULT_MARGIN_DB)
    decode.add_argument('--windows', type=int, default=DEFAULT_WINDOW_COUNT)
    decode.add_argument('--payload-len', type=int, help='inferred from the symbol count when omitted')
    decode.add_argument('--bw', type=float, default=DEFAULT_BW_HZ)
    decode.add_argument('--calibration')

    demo = sub.add_parser('demo', help='single-symbol walkthrough of the PSR stages as CSV matrices')
    demo.add_argument('--sf', type=int, default=10)
    demo.add_argument('--symbol', type=int, default=513)
    demo.add_argument('--snr', type=float, default=-10.0)
    demo.add_argument('--inr', type=float, default=DEFAULT_INR_DB)
    demo.add_argument('--burst', default='176:634', help='corrupted chips START:END')
    demo.add_argument('--windows', type=int, default=DEFAULT_WINDOW_COUNT)
    demo.add_argument('--seed', type=int, default=0)
    demo.add_argument('--calibration')

    simulate = sub.add_parser('simulate', help='write one interfered packet to an iq file')
    simulate.add_argument('--sf', type=int, default=10)
    simulate.add_argument('--snr', type=float, default=-10.0)
    simulate.add_argument('--traffic', default='high')
    simulate.add_argument('--interference', choices=sorted(INTERFERENCE_MIXES), default='wifi')
    simulate.add_argument('--inr', type=float, default=DEFAULT_INR_DB)
    simulate.add_argument('--near-fraction', type=float, default=NEAR_FRACTION)
    simulate.add_argument('--payload-len', type=int, default=100)
    simulate.add_argument('--bw', type=float, default=DEFAULT_BW_HZ)
    simulate.add_argument('--seed', type=int, default=0)
    simulate.add_argument('--output', required=True)
    return parser


def cmd_run(args):
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, key) for key in CONFIG_KEYS}
    cfg = build_config(file_values, overrides)
    report = run_experiment(cfg)
    emit_report(report, cfg.output_path, cfg.format)
    for decoder, means in report.summary().items():
        logger.info('%s: mean prr %.3f, mean throughput %.3f kbps', decoder, means['prr'], means['throughput_kbps'])
    if cfg.osc_ip:
        from osc_publish import OscPublisher
        OscPublisher(cfg.osc_ip, cfg.osc_port).publish(report)
    return 0


def cmd_calibrate(args):
    table = build_calibration(args.sf, trials=args.trials, seed=args.seed, percentile=args.percentile)
    save_calibration(table, args.output)
    print(f'calibration for sf {",".join(str(sf) for sf in args.sf)} written to {args.output}')
    return 0


def _calibration_for(path, sf, windows):
    cache = CalibrationCache(load_calibration(path) if path else None)
    cache.thresholds_for(sf, [w.window_len for w in windows])
    cache.fast_path_bound(sf)
    return cache.table


def cmd_decode(args):
    header, samples = read_iq(args.path)
    params = LoraParams(sf=header.sf, bw_hz=args.bw)
    if samples.size % params.n_chips:
        raise FramingError(f'{args.path}: {samples.size} samples is not a whole number of sf={header.sf} symbols')
    decoders = DECODERS if args.decoder == 'both' else (args.decoder,)
    windows = default_windows(params, args.windows)
    calibration = _calibration_for(args.calibration, params.sf, windows) if 'psr' in decoders else None

    frames = samples.astype(np.complex128).reshape(-1, params.n_chips)
    standard, peaks = demod_stream(frames.reshape(-1), params)
    results = {}
    print('index,standard,standard_peak,psr,fast_path,line_bin,clean_chips,succeeded')
    for i, frame in enumerate(frames):
        line = [i, int(standard[i]), f'{peaks[i]:.3f}']
        if 'psr' in decoders:
            result = psr_demod(frame, params, windows, calibration, args.snr, args.margin)
            results.setdefault('psr', []).append(result.symbol)
            line += [result.symbol, int(result.fast_path), '' if result.line_bin is None else result.line_bin,
                     result.clean_count, int(result.succeeded)]
        else:
            line += ['', '', '', '', '']
        print(','.join(str(v) for v in line))
    results['standard'] = list(standard)

    payload_len = args.payload_len
    if payload_len is None:
        try:
            payload_len = infer_payload_len(len(frames), params.sf)
        except FramingError as e:
            logger.warning('no packet framing: %s', e)
            return 0
    for decoder in decoders:
        result = decode_payload_verbose(results[decoder], params, payload_len)
        print(f'{decoder}: crc_ok={result.crc_ok} corrected={result.corrected} detected={result.detected} '
              f'payload={result.payload.hex()}')
    return 0


def _parse_burst(text, n):
    try:
        start, end = (int(v) for v in text.split(':'))
    except ValueError:
        raise ConfigInvalid(f'burst must be START:END, got `{text}`')
    if not 0 <= start < end <= n:
        raise ConfigInvalid(f'burst must satisfy 0 <= START < END <= {n}, got {start}:{end}')
    return start, end


def _print_matrix(title, matrix):
    print(f'# {title}')
    writer = csv.writer(sys.stdout, lineterminator='\n')
    for row in matrix:
        writer.writerow(f'{v:.6g}' for v in row)


def cmd_demo(args):
    params = LoraParams(sf=args.sf)
    windows = default_windows(params, args.windows)
    start, end = _parse_burst(args.burst, params.n_chips)
    rng = np.random.default_rng(args.seed)

    tx = gen_upchirp(params, args.symbol)
    noise_power = noise_power_for(tx, args.snr)
    noisy = tx + complex_gaussian(rng, tx.size, noise_power)
    event = BurstEvent(start_chip=start, duration_chips=end - start, inr_db=args.inr)
    rx, _ = mix(noisy, [(event, render_burst(event, rng, noise_power))])

    calibration = _calibration_for(args.calibration, params.sf, windows)
    stages = stft_stages(rx, params, windows)
    for cfg, spec, pooled, grid in stages:
        _print_matrix(f'window={cfg.window_len} hop={cfg.hop} stage=spectrogram', spec.values)
        _print_matrix(f'window={cfg.window_len} hop={cfg.hop} stage=pooled pool_len={pooled.pool_len}', pooled.values)
        _print_matrix(f'window={cfg.window_len} hop={cfg.hop} stage=norm', grid.norm)

    thresholds = calibration.thresholds_for(params.sf, [cfg.window_len for cfg in windows])
    standard, magnitudes = demod_fft(dechirp(rx, gen_downchirp(params)))
    line_bin = locate_bright_line([grid for _, _, _, grid in stages], thresholds, magnitudes)
    result = psr_demod(rx, params, windows, calibration, args.snr)
    clean = result.mask.clean if result.mask is not None else np.ones(params.n_chips, dtype=bool)
    _print_matrix('stage=clean_mask', [clean.astype(int)])
    print(f'# bright_line={line_bin} standard={standard} psr={result.symbol} '
          f'clean_chips={result.clean_count} succeeded={result.succeeded} fast_path={result.fast_path}')
    return 0


def cmd_simulate(args):
    params = LoraParams(sf=args.sf, bw_hz=args.bw)
    rng = np.random.default_rng(args.seed)
    payload = rng.integers(0, 256, size=args.payload_len, dtype=np.uint8).tobytes()
    packet = encode_payload(payload, params)
    traffic = TrafficModel.from_preset(args.traffic, args.interference, args.inr, args.near_fraction)
    channel = Channel(ChannelConfig(snr_db=args.snr, traffic=traffic, seed=args.seed, bw_hz=args.bw), rng=rng)
    out = channel.transmit(modulate(packet.all_symbols, params))
    samples = out.samples.astype(np.complex64)
    write_iq(args.output, IqFileHeader.for_samples(params.sf, samples), samples)
    print(f'{len(packet.all_symbols)} symbols, {len(out.events)} bursts, payload={payload.hex()} -> {args.output}')
    return 0


COMMANDS = {
    'run': cmd_run,
    'calibrate': cmd_calibrate,
    'decode': cmd_decode,
    'demo': cmd_demo,
    'simulate': cmd_simulate,
}


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (PsrError, OSError) as e:
        print(f'error: {e}', file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(cli_main())
