import json

import pytest

from calibration import build_calibration, load_calibration
from errors import ConfigInvalid
from harness import (REPORT_COLUMNS, ExperimentConfig, MetricsReport, build_config, cli_main, emit_report,
                     parse_float_list, parse_int_list, parse_str_list, read_config_file, run_experiment, throughput)
from lora_phy import LoraParams


def report_row(**overrides):
    row = {
        'sf': 10, 'snr_db': -10.0, 'traffic': 'high', 'interference': 'wifi', 'decoder': 'psr',
        'symbols_total': 1640, 'symbols_corrupted': 40, 'symbols_recovered': 30, 'srr': 0.75,
        'packets_total': 10, 'packets_ok': 9, 'prr': 0.9, 'throughput_kbps': 3.5,
        'clean_fraction_histogram': [4] * 10, 'recovered_histogram': [3] * 10,
    }
    row.update(overrides)
    return row


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert cfg.cells == [(10, -10.0)]
        assert cfg.decoders == ('standard', 'psr')

    @pytest.mark.parametrize('kwargs', [
        {'decoders': ('fancy',)},
        {'decoders': ('psr', 'psr')},
        {'sf_list': ()},
        {'sf_list': (13,)},
        {'payload_len': 256},
        {'packets_per_cell': 0},
        {'format': 'xml'},
        {'traffic': 'rush-hour'},
        {'interference': 'lte'},
        {'workers': 0},
        {'windows': 0},
        {'hop': 0},
        {'seed': -1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigInvalid):
            ExperimentConfig(**kwargs)

    def test_cells_cover_the_grid(self):
        cfg = ExperimentConfig(sf_list=[7, 8], snr_db_list=[-5, 0])
        assert cfg.cells == [(7, -5.0), (7, 0.0), (8, -5.0), (8, 0.0)]


class TestParsing:
    def test_int_ranges(self):
        assert parse_int_list('7..9,12') == [7, 8, 9, 12]
        assert parse_int_list(' 10 ') == [10]

    def test_float_lists(self):
        assert parse_float_list('-15,-10..-8') == [-15.0, -10.0, -9.0, -8.0]
        assert parse_float_list('2.5') == [2.5]

    def test_str_lists(self):
        assert parse_str_list('standard, psr,') == ['standard', 'psr']

    def test_config_file_and_overrides(self, tmp_path):
        path = tmp_path / 'sweep.conf'
        path.write_text(
            '# sweep\n'
            'sf = 7..8\n'
            'snr = -10, -5   # dB\n'
            'payload-len = 20\n'
            'decoder = psr\n'
            'hop = none\n'
        )
        cfg = build_config(read_config_file(path), {'sf': [9], 'packets': None})
        assert cfg.sf_list == (9,)
        assert cfg.snr_db_list == (-10.0, -5.0)
        assert cfg.payload_len == 20
        assert cfg.decoders == ('psr',)
        assert cfg.hop is None

    @pytest.mark.parametrize('text', ['colour = blue\n', 'sf 10\n', 'packets = many\n'])
    def test_bad_config_file(self, tmp_path, text):
        path = tmp_path / 'bad.conf'
        path.write_text(text)
        with pytest.raises(ConfigInvalid):
            build_config(read_config_file(path))


class TestMetrics:
    def test_throughput(self):
        params = LoraParams(sf=10)
        assert throughput(0.0, params, 800, 0.8) == 0.0
        assert throughput(1.0, params, 800, 0.8) == pytest.approx(1.0)

    def test_throughput_from_framing(self):
        params = LoraParams(sf=10)
        toa = 164 * 1024 / 812.5e3
        assert throughput(1.0, params, 800) == pytest.approx(800 / toa / 1000)

    def test_throughput_needs_positive_airtime(self):
        with pytest.raises(ConfigInvalid):
            throughput(1.0, LoraParams(sf=7), 8, 0.0)

    def test_empty_report_is_header_only(self):
        assert MetricsReport().to_csv() == ','.join(REPORT_COLUMNS) + '\n'

    def test_json_round_trip(self):
        report = MetricsReport(rows=[report_row(), report_row(decoder='standard', srr=0.0)])
        document = json.loads(report.to_json())
        assert document['schema_version'] == 1
        assert document['columns'] == list(REPORT_COLUMNS)
        assert MetricsReport.from_json(report.to_json()) == report

    def test_csv_round_trip(self):
        report = MetricsReport(rows=[report_row()])
        assert MetricsReport.from_csv(report.to_csv()) == report

    def test_bucket_srr(self):
        row = report_row(clean_fraction_histogram=[10, 10, 5, 5, 0, 0, 0, 0, 0, 0],
                         recovered_histogram=[1, 1, 5, 0, 0, 0, 0, 0, 0, 0])
        assert MetricsReport.bucket_srr(row) == {'<20%': 0.1, '20-40%': 0.5, '>40%': None}

    def test_emit_to_file_and_stdout(self, tmp_path, capsys):
        report = MetricsReport(rows=[report_row()])
        path = tmp_path / 'report.json'
        emit_report(report, path, 'json')
        assert MetricsReport.from_json(path.read_text()) == report
        emit_report(report, None, 'csv')
        assert capsys.readouterr().out == report.to_csv()

    def test_select(self):
        report = MetricsReport(rows=[report_row(), report_row(decoder='standard')])
        assert [row['decoder'] for row in report.select(decoder='standard')] == ['standard']

    def test_summary(self):
        report = MetricsReport(rows=[
            report_row(prr=0.9, throughput_kbps=3.0),
            report_row(sf=12, prr=0.5, throughput_kbps=1.0),
            report_row(decoder='standard', prr=0.2, throughput_kbps=0.5),
        ])
        summary = report.summary()
        assert list(summary) == ['psr', 'standard']
        assert summary['psr'] == pytest.approx({'prr': 0.7, 'throughput_kbps': 2.0})
        assert summary['standard'] == pytest.approx({'prr': 0.2, 'throughput_kbps': 0.5})
        assert MetricsReport().summary() == {}


class TestExperiment:
    def test_rows_per_decoder(self, small_calibration):
        cfg = ExperimentConfig(sf_list=[7], snr_db_list=[-5], payload_len=10, packets_per_cell=3)
        report = run_experiment(cfg, small_calibration)
        assert [row['decoder'] for row in report.rows] == ['standard', 'psr']
        standard, psr = report.rows
        assert standard['srr'] == 0.0
        assert standard['symbols_corrupted'] == psr['symbols_corrupted']
        assert standard['clean_fraction_histogram'] == psr['clean_fraction_histogram']
        assert sum(standard['clean_fraction_histogram']) == standard['symbols_corrupted']
        assert standard['symbols_total'] == 3 * (23 + 5)
        assert 0.0 <= psr['srr'] <= 1.0

    def test_serial_and_parallel_agree(self, small_calibration):
        base = dict(sf_list=[7, 8], snr_db_list=[-5], payload_len=8, packets_per_cell=2, seed=9)
        serial = run_experiment(ExperimentConfig(**base), small_calibration)
        parallel = run_experiment(ExperimentConfig(workers=2, **base), small_calibration)
        assert serial.to_csv() == parallel.to_csv()

    def test_clean_channel_delivers(self):
        cfg = ExperimentConfig(sf_list=[10], snr_db_list=[-10], traffic='none', payload_len=20,
                               packets_per_cell=20, decoders=('standard',))
        row, = run_experiment(cfg).rows
        assert row['prr'] > 0.99
        assert row['symbols_corrupted'] == 0

    @pytest.mark.slow
    def test_psr_beats_standard_under_heavy_traffic(self):
        cfg = ExperimentConfig(sf_list=[10], snr_db_list=[-10], traffic='high', payload_len=100,
                               packets_per_cell=400, calibration_trials=200)
        standard, psr = run_experiment(cfg).rows
        assert standard['prr'] > 0
        assert psr['prr'] >= 2 * standard['prr']
        assert psr['throughput_kbps'] >= 2 * standard['throughput_kbps']
        assert psr['symbols_recovered'] > 0

    @pytest.mark.slow
    def test_gain_across_spreading_factors(self):
        cfg = ExperimentConfig(sf_list=range(7, 13), snr_db_list=[-10], traffic='high', payload_len=100,
                               packets_per_cell=150, workers=6)
        report = run_experiment(cfg)
        summary = report.summary()
        assert summary['standard']['prr'] > 0
        assert summary['psr']['prr'] >= 1.8 * summary['standard']['prr']
        standard, = report.select(sf=12, decoder='standard')
        psr, = report.select(sf=12, decoder='psr')
        assert standard['throughput_kbps'] > 0
        assert psr['throughput_kbps'] >= 1.2 * standard['throughput_kbps']
        for sf in cfg.sf_list:
            standard, = report.select(sf=sf, decoder='standard')
            psr, = report.select(sf=sf, decoder='psr')
            assert psr['prr'] >= standard['prr'] - 0.01

    @pytest.mark.slow
    def test_more_windows_recover_more(self):
        srr = {}
        for count in (2, 6, 8):
            cfg = ExperimentConfig(sf_list=[10], snr_db_list=[-10], traffic='mid', payload_len=100,
                                   packets_per_cell=150, decoders=('psr',), windows=count)
            row, = run_experiment(cfg).rows
            srr[count] = row['srr']
        assert srr[6] - srr[2] > 0.05
        assert abs(srr[8] - srr[6]) <= 0.03


class TestCli:
    def test_decode_missing_file(self, tmp_path, capsys):
        path = tmp_path / 'missing.iq'
        assert cli_main(['decode', str(path)]) != 0
        assert str(path) in capsys.readouterr().err

    def test_bad_flag(self):
        assert cli_main(['run', '--format', 'xml']) == 2

    def test_calibrate_simulate_decode(self, tmp_path, capsys):
        calibration = tmp_path / 'calibration.json'
        trace = tmp_path / 'trace.iq'
        assert cli_main(['-q', 'calibrate', '--sf', '7', '--trials', '3', '--output', str(calibration)]) == 0
        assert load_calibration(calibration).sf_list == [7]

        assert cli_main(['-q', 'simulate', '--sf', '7', '--snr', '5', '--traffic', 'none',
                         '--payload-len', '12', '--output', str(trace)]) == 0
        capsys.readouterr()
        assert cli_main(['-q', 'decode', str(trace), '--calibration', str(calibration), '--snr', '5']) == 0
        out = capsys.readouterr().out
        assert out.startswith('index,standard,standard_peak,psr,')
        assert 'standard: crc_ok=True' in out
        assert 'psr: crc_ok=True' in out

    def test_demo(self, tmp_path, capsys):
        calibration = tmp_path / 'calibration.json'
        assert cli_main(['-q', 'calibrate', '--sf', '7', '--trials', '3', '--output', str(calibration)]) == 0
        capsys.readouterr()
        assert cli_main(['-q', 'demo', '--sf', '7', '--symbol', '5', '--burst', '20:60',
                         '--calibration', str(calibration)]) == 0
        out = capsys.readouterr().out
        assert '# window=64 hop=16 stage=spectrogram' in out
        assert '# stage=clean_mask' in out
        assert '# bright_line=' in out

    def test_demo_rejects_bad_burst(self, capsys):
        assert cli_main(['-q', 'demo', '--sf', '7', '--burst', '60:20']) == 1
        assert 'burst' in capsys.readouterr().err

    def test_run_writes_report(self, tmp_path):
        output = tmp_path / 'report.json'
        assert cli_main(['-q', 'run', '--sf', '7', '--snr', '0', '--traffic', 'none', '--packets', '2',
                         '--payload-len', '5', '--decoder', 'standard', '--format', 'json',
                         '--output', str(output)]) == 0
        row, = MetricsReport.from_json(output.read_text()).rows
        assert row['prr'] == 1.0
        assert row['packets_total'] == 2

    def test_run_reuses_a_calibration_file(self, tmp_path, monkeypatch):
        calibration = tmp_path / 'calibration.json'
        assert cli_main(['-q', 'calibrate', '--sf', '7..12', '--trials', '3', '--output', str(calibration)]) == 0

        def rebuild(*args, **kwargs):
            raise AssertionError('calibration rebuilt')

        monkeypatch.setattr('calibration.calibrate_sf', rebuild)
        output = tmp_path / 'report.csv'
        assert cli_main(['-q', 'run', '--sf', '7,12', '--snr', '0', '--traffic', 'none', '--packets', '1',
                         '--payload-len', '5', '--decoder', 'psr', '--calibration', str(calibration),
                         '--output', str(output)]) == 0
        assert [row['sf'] for row in MetricsReport.from_csv(output.read_text()).rows] == [7, 12]


def test_build_calibration_matches_cli_defaults():
    table = build_calibration([7], trials=2, seed=0)
    assert table.percentile == 99.9
    assert table.fast_path_percentile == 99.9
