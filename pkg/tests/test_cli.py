"""End-to-end runs of the experiment CLI: exit codes, report formats, checkpoints."""
import asyncio
import io
import json
import logging
import sqlite3

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from korobov import __version__
from korobov.cli import CSV_COLUMNS, RUN_COLUMNS, SUITE_COLUMNS, check_partition, main, rows_to_csv, run_gadget_suite
from korobov.construct import TrimmedRegion
from korobov.net import load_network, scale_output
from korobov.storage import CheckpointStore

INTERP = ['interp', '--fn', 'sine', '--levels', '3-6', '--samples', '1024']


def without_seconds(frame):
    return frame.drop(columns=['seconds'])


class TestInterp:
    def test_csv_report(self, tmp_path):
        out = tmp_path / 'interp.csv'
        assert main(INTERP + ['--out', str(out)]) == 0
        lines = out.read_text(encoding='utf-8').splitlines()
        assert lines[0] == ','.join(CSV_COLUMNS)
        frame = pd.read_csv(out)
        assert list(frame['n']) == [3, 4, 5, 6]
        assert frame['W'].isna().all()
        assert list(frame['params']) == [7, 15, 31, 63]
        assert (frame['error'].diff().dropna() < 0).all()
        fit = json.loads((tmp_path / 'interp.csv.fit.json').read_text(encoding='utf-8'))['fit']
        assert fit['size'] == '2^n'
        assert fit['slope'] == pytest.approx(-2.0, abs=0.2)

    def test_stdout_and_json_agree(self, tmp_path, capsys):
        assert main(INTERP) == 0
        from_csv = pd.read_csv(io.StringIO(capsys.readouterr().out))
        out = tmp_path / 'interp.json'
        assert main(INTERP + ['--format', 'json', '--out', str(out)]) == 0
        doc = json.loads(out.read_text(encoding='utf-8'))
        assert doc['meta']['command'] == 'interp'
        assert len(doc['meta']['run_key']) == 40
        assert_allclose([row['error'] for row in doc['rows']], from_csv['error'], rtol=1e-15)
        assert doc['rows'][0]['detail']['bound'] > 0.0

    def test_deterministic_apart_from_timing(self, tmp_path):
        first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
        assert main(INTERP + ['--out', str(first)]) == 0
        assert main(INTERP + ['--out', str(second)]) == 0
        pd.testing.assert_frame_equal(without_seconds(pd.read_csv(first)), without_seconds(pd.read_csv(second)))


class TestExitCodes:
    def test_unknown_function(self, tmp_path, caplog):
        assert main(['interp', '--fn', 'sin', '--out', str(tmp_path / 'x.csv')]) == 1
        assert "did you mean 'sine'" in caplog.text

    def test_usage_errors(self, capsys):
        assert main(['interp', '--bogus']) == 1
        assert main(['frobnicate']) == 1
        assert main(['build', '--norm', 'h1']) == 1
        assert 'korobov' in capsys.readouterr().err

    def test_bad_values(self, tmp_path):
        assert main(['build', '--m', '4']) == 1
        assert main(['interp', '--p', '0.5']) == 1
        assert main(['rates', '--input', str(tmp_path / 'missing.csv')]) == 1
        assert main(['rates']) == 1

    def test_unwritable_output(self, tmp_path):
        assert main(INTERP + ['--out', str(tmp_path)]) == 1


class TestRates:
    @pytest.fixture
    def report(self, tmp_path):
        out = tmp_path / 'interp.csv'
        assert main(INTERP + ['--out', str(out)]) == 0
        return out

    def test_slope_line(self, report, capsys):
        assert main(['rates', '--input', str(report)]) == 0
        line = capsys.readouterr().out.strip()
        fields = dict(part.split('=') for part in line.split())
        assert set(fields) == {'slope', 'intercept', 'r2', 'rows'}
        assert float(fields['slope']) == pytest.approx(-2.0, abs=0.2)
        assert fields['rows'] == '4'

    def test_max_slope_verdict(self, report):
        assert main(['rates', '--input', str(report), '--max-slope', '-1.5']) == 0
        assert main(['rates', '--input', str(report), '--max-slope', '-3']) == 2

    def test_sweep_max_slope(self, tmp_path):
        assert main(INTERP + ['--out', str(tmp_path / 'r.csv'), '--max-slope', '-3']) == 2

    def test_too_few_rows(self, tmp_path):
        path = tmp_path / 'short.csv'
        path.write_text(rows_to_csv([{'n': 2, 'error': 0.1}, {'n': 3, 'error': 0.02}]), encoding='utf-8')
        assert main(['rates', '--input', str(path)]) == 1

    def test_missing_columns(self, tmp_path):
        path = tmp_path / 'other.csv'
        path.write_text('n,error\n2,0.1\n3,0.02\n4,0.005\n', encoding='utf-8')
        assert main(['rates', '--input', str(path)]) == 1


class TestBuild:
    def test_small_sweep_with_network_dump(self, tmp_path):
        out, dump = tmp_path / 'build.csv', tmp_path / 'nets' / 'last.json'
        code = main(['build', '--sweep', '1x1,2x1', '--samples', '256', '--out', str(out), '--dump-net', str(dump)])
        assert code == 0
        frame = pd.read_csv(out)
        assert list(frame['W']) == [1, 2]
        assert list(frame['n']) == [2, 4]
        assert (frame['epsilon'] > 0).all() and (frame['epsilon'] <= 2.0 ** -5).all()
        assert frame['error'].iloc[1] < frame['error'].iloc[0]
        net = load_network(dump)
        assert (net.width, net.depth) == (frame['width'].iloc[1], frame['depth'].iloc[1])
        x = TrimmedRegion(4, frame['epsilon'].iloc[1]).sample(1, 200, seed=2)
        assert np.max(np.abs(net.evaluate(x)[:, 0] - np.sin(np.pi * x[:, 0]))) < 0.2

    def test_checkpoint_resume_is_byte_identical(self, tmp_path):
        db = tmp_path / 'runs.sqlite3'
        args = ['build', '--sweep', '1x1,2x1', '--samples', '256', '--checkpoint', str(db)]
        first, second = tmp_path / 'first.csv', tmp_path / 'second.csv'
        assert main(args + ['--out', str(first)]) == 0
        assert main(args + ['--out', str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_no_checkpoint_overrides_env(self, tmp_path, monkeypatch):
        db = tmp_path / 'env.sqlite3'
        monkeypatch.setenv('KOROBOV_CHECKPOINT_DB', str(db))
        args = ['interp', '--levels', '2-3', '--samples', '64', '--out', str(tmp_path / 'r.csv')]
        assert main(args + ['--no-checkpoint']) == 0
        assert not db.exists()
        assert main(args) == 0
        assert db.exists()


class TestGadgetSuite:
    def test_quick_suite_passes(self, tmp_path):
        out = tmp_path / 'gadgets.csv'
        assert main(['gadgets', '--quick', '--out', str(out)]) == 0
        frame = pd.read_csv(out)
        assert list(frame.columns) == list(SUITE_COLUMNS)
        assert frame['passed'].all()
        assert {'step_network', 'point_fitter', 'product2', 'product2_zero_slice', 'product_multi', 'partition_net',
                'support_localization', 'product_perturbation'} <= set(frame['gadget'])

    def test_injected_fault_fails_the_suite(self):
        rows, code = run_gadget_suite(quick=True, faults={'product2': lambda net: scale_output(net, 50.0)})
        assert code == 2
        failed = {row['gadget'] for row in rows if not row['passed']}
        assert failed == {'product2'}

    def test_default_matrix_samples_two_dimensional_partitions_off_kinks(self):
        check = check_partition(2, (1, 2), 1, 1)
        assert check.passed, check.to_row()

    @pytest.mark.slow
    def test_default_matrix_passes(self, tmp_path):
        out = tmp_path / 'gadgets.json'
        assert main(['gadgets', '--format', 'json', '--out', str(out)]) == 0
        rows = json.loads(out.read_text(encoding='utf-8'))['rows']
        assert all(row['passed'] for row in rows)
        perturbed = {json.loads(row['params'])['eps'] for row in rows if row['gadget'] == 'product_perturbation'}
        assert perturbed == {1e-2, 1e-4}


class TestRuns:
    @pytest.fixture
    def db(self, tmp_path):
        db = tmp_path / 'runs.sqlite3'
        assert main(['interp', '--levels', '2-3', '--samples', '64', '--checkpoint', str(db),
                     '--out', str(tmp_path / 'interp.csv')]) == 0
        assert main(['build', '--sweep', '1x1', '--samples', '64', '--checkpoint', str(db),
                     '--out', str(tmp_path / 'build.csv')]) == 0
        return db

    def test_lists_every_recorded_sweep(self, db, tmp_path):
        out = tmp_path / 'runs.csv'
        assert main(['runs', '--checkpoint', str(db), '--out', str(out)]) == 0
        frame = pd.read_csv(out, dtype={'version': str})
        assert list(frame.columns) == list(RUN_COLUMNS)
        by_command = dict(zip(frame['command'], frame['rows']))
        assert by_command == {'interp': 2, 'build': 1}
        assert set(frame['version']) == {__version__}

    def test_clear_by_key_prefix(self, db, tmp_path):
        listing = tmp_path / 'before.json'
        assert main(['runs', '--checkpoint', str(db), '--format', 'json', '--out', str(listing)]) == 0
        [interp] = [r for r in json.loads(listing.read_text(encoding='utf-8'))['runs'] if r['command'] == 'interp']
        after = tmp_path / 'after.json'
        assert main(['runs', '--checkpoint', str(db), '--clear', interp['run_key'][:8], '--format', 'json',
                     '--out', str(after)]) == 0
        assert [r['command'] for r in json.loads(after.read_text(encoding='utf-8'))['runs']] == ['build']

    def test_unknown_key_or_missing_file_is_a_config_error(self, db, tmp_path):
        assert main(['runs', '--checkpoint', str(db), '--clear', 'zzz']) == 1
        assert main(['runs', '--checkpoint', str(tmp_path / 'absent.sqlite3')]) == 1
        assert not (tmp_path / 'absent.sqlite3').exists()

    def test_resuming_a_run_from_another_version_warns(self, tmp_path, caplog):
        db = tmp_path / 'runs.sqlite3'
        args = ['interp', '--levels', '2-3', '--samples', '64', '--checkpoint', str(db),
                '--out', str(tmp_path / 'interp.csv')]
        assert main(args) == 0
        conn = sqlite3.connect(db)
        with conn:
            conn.execute("UPDATE runs SET version = '0.0.1'")
        conn.close()
        caplog.set_level(logging.WARNING, logger='Korobov')
        assert main(args) == 0
        assert 'started by korobov 0.0.1' in caplog.text
        runs = asyncio.run(CheckpointStore(db).list_runs())
        assert [r['version'] for r in runs] == ['0.0.1']
