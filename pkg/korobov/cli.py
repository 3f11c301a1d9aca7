"""Experiment runner: ``python -m korobov {interp,build,gadgets,rates,runs}``.

Sweeps run one row per (W, L) pair or level n, in worker threads, and write
CSV or JSON reports in sweep order. Finished rows are checkpointed so an
interrupted sweep resumes where it stopped.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Optional, Sequence

import humanize
import numpy as np
import pandas as pd
from dotenv import load_dotenv

from . import __version__
from .config import FORMATS, NORMS, ExperimentConfig, load_config
from .construct import build_theorem1, build_theorem2, choose_n
from .corpus import make_sine_product, resolve
from .errors import EXIT_CONFIG, EXIT_CONTRACT, EXIT_OK, ConfigError, ContractViolation
from .gadgets import (Box, ContractCheck, GadgetContract, Norm, OmegaK, box_points, check_contract,
                      check_product_perturbation, partition_g, partition_g_gradient, partition_net, point_fitter,
                      product2, product_multi, step_network, support_localization_check)
from .grid import hierarchize, interp_error_bound
from .logging_config import setup_logging
from .metrics import RateFit, RateReport, lp_error, w1p_error
from .net import ReluNetwork, save_network
from .storage import CheckpointStore

logger = logging.getLogger('Korobov.CLI')

CSV_COLUMNS = ('d', 'm', 'p', 'W', 'L', 'n', 'epsilon', 'width', 'depth', 'params', 'error', 'seconds')
SUITE_COLUMNS = ('gadget', 'params', 'norm', 'width', 'depth', 'width_bound', 'depth_bound', 'measured', 'bound',
                 'margin', 'passed')
ZERO_SLICE_TOL = 1e-12

Fault = Callable[[ReluNetwork], ReluNetwork]


# --- sweep rows --------------------------------------------------------------------

def _row(cfg: ExperimentConfig, **values: Any) -> dict:
    row = {key: None for key in CSV_COLUMNS}
    row.update(d=cfg.d, m=cfg.m, p=cfg.p)
    row.update(values)
    return row


def _measure(cfg: ExperimentConfig, f, approx):
    measure = w1p_error if cfg.norm == 'w1p' else lp_error
    return measure(f, approx, cfg.p, cfg.quadrature())


def interp_row(cfg: ExperimentConfig, n: int) -> dict:
    """Hierarchize the target at level budget n and measure the interpolation error."""
    started = time.perf_counter()
    f = resolve(cfg.fn, cfg.d)
    interp = hierarchize(f, n, cfg.m, cfg.d)
    estimate = _measure(cfg, f, interp)
    detail = {'spread': estimate.spread, 'samples': estimate.samples, 'max_surplus': interp.max_surplus(),
              'bound': interp_error_bound(n, cfg.m, cfg.d, cfg.p)}
    return _row(cfg, n=n, params=len(interp), error=estimate.value, seconds=time.perf_counter() - started,
                status='ok', budget_ok=None, detail=detail)


def build_row(cfg: ExperimentConfig, W: int, L: int, dump_to: Optional[Path] = None) -> dict:
    """Construct the network for one (W, L) pair and measure it against the target."""
    started = time.perf_counter()
    f = resolve(cfg.fn, cfg.d)
    if cfg.norm == 'lp':
        net, report = build_theorem1(f, cfg.m, W, L, cfg.d, cfg.p)
    else:
        net, report = build_theorem2(f, cfg.m, W, L, cfg.d, cfg.p, quadrature=cfg.quadrature())
    estimate = _measure(cfg, f, net)
    if dump_to is not None:
        save_network(net, dump_to)
        logger.info('Saved %s to %s', net.name, dump_to)
    summary = json.loads(report.to_json(indent=None))
    detail = {'spread': estimate.spread, 'samples': estimate.samples, 'theorem': report.theorem,
              'budget': summary['budget'], 'bound_sum': report.bound_sum, 'interp_bound': report.interp_bound,
              'grid': summary['grid'], 'blocks': len(report.blocks), 'c_norm': report.c_norm,
              'extras': summary['extras']}
    return _row(cfg, W=W, L=L, n=report.n, epsilon=report.epsilon, width=net.width, depth=net.depth,
                params=net.params, error=estimate.value, seconds=time.perf_counter() - started, status='ok',
                budget_ok=report.budget_ok, detail=detail)


def _guarded(cfg: ExperimentConfig, index: int, task: Callable[[], dict], base: dict) -> dict:
    try:
        return task()
    except Exception as e:
        logger.exception('Row %d failed', index)
        return _row(cfg, **base, status='failed', budget_ok=None, detail={'error': f'{type(e).__name__}: {e}'})


async def run_rows(cfg: ExperimentConfig, tasks: Sequence[tuple[dict, Callable[[], dict]]]) -> list[dict]:
    """Run sweep rows concurrently (``cfg.workers`` at a time); results come back in sweep order."""
    store: Optional[CheckpointStore] = None
    done: dict[int, dict] = {}
    run_key = cfg.run_key()
    if cfg.checkpoint is not None:
        store = CheckpointStore(cfg.checkpoint)
        await store.init()
        recorded = await store.register_run(run_key, cfg.command, cfg.keyed(), __version__)
        if recorded != __version__:
            logger.warning('Run %s was started by korobov %s; resuming it with %s', run_key[:10], recorded,
                           __version__)
        done = await store.load_rows(run_key)
        if done:
            logger.info('Resuming run %s: %d of %d rows already finished', run_key[:10], len(done), len(tasks))
    gate = asyncio.Semaphore(cfg.workers)

    async def one(index: int, base: dict, task: Callable[[], dict]) -> dict:
        if index in done:
            return done[index]
        async with gate:
            row = await asyncio.to_thread(_guarded, cfg, index, task, base)
        if store is not None and row['status'] == 'ok':
            await store.save_row(run_key, index, row)
        return row

    return list(await asyncio.gather(*(one(i, base, task) for i, (base, task) in enumerate(tasks))))


# --- reports ---------------------------------------------------------------------

def _check_writable(path: Optional[Path]) -> None:
    if path is None:
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f'cannot create {path.parent}: {e}') from None
    if path.is_dir() or not os.access(path.parent, os.W_OK) or (path.exists() and not os.access(path, os.W_OK)):
        raise ConfigError(f'cannot write report to {path}')


def _write_text(path: Optional[Path], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        path.write_text(text, encoding='utf-8')
    except OSError as e:
        raise ConfigError(f'cannot write {path}: {e}') from None


def rows_to_csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str] = CSV_COLUMNS) -> str:
    frame = pd.DataFrame([[row.get(c) for c in columns] for row in rows], columns=list(columns), dtype=object)
    return frame.to_csv(index=False, lineterminator='\n')


def write_report(cfg: ExperimentConfig, rows: Sequence[dict], fit: Optional[RateFit], size: str) -> None:
    fit_doc = None if fit is None else dict(fit.to_dict(), size=size)
    if cfg.format == 'json':
        meta = {'command': cfg.command, 'version': __version__, 'run_key': cfg.run_key(), 'config': cfg.to_dict()}
        _write_text(cfg.out, json.dumps({'meta': meta, 'rows': list(rows), 'fit': fit_doc}, indent=2) + '\n')
        return
    _write_text(cfg.out, rows_to_csv(rows))
    if cfg.out is not None:
        _write_text(Path(f'{cfg.out}.fit.json'), json.dumps({'fit': fit_doc}, indent=2) + '\n')


def _slope_verdict(cfg: ExperimentConfig, fit: Optional[RateFit]) -> int:
    if cfg.max_slope is None:
        return EXIT_OK
    if fit is None:
        logger.error('No rate fit (fewer than 3 rows with a positive error); --max-slope %g not met', cfg.max_slope)
        return EXIT_CONTRACT
    if fit.slope > cfg.max_slope:
        logger.error('Fitted slope %.3f is above the required %.3f', fit.slope, cfg.max_slope)
        return EXIT_CONTRACT
    return EXIT_OK


def _finish_sweep(cfg: ExperimentConfig, rows: list[dict], size_fn: Callable[[dict], float], size: str,
                  started: float) -> int:
    report = RateReport()
    for row in rows:
        report.add(row)
    fit = report.fit_on(size_fn)
    write_report(cfg, report.rows, fit, size)
    failed = [i for i, row in enumerate(rows) if row['status'] != 'ok']
    if failed:
        logger.warning('%d of %d rows failed: %s', len(failed), len(rows), failed)
    logger.info('%s finished %d rows in %s', cfg.command, len(rows),
                humanize.naturaldelta(time.perf_counter() - started))
    return _slope_verdict(cfg, fit)


def run_interp(cfg: ExperimentConfig) -> int:
    resolve(cfg.fn, cfg.d)
    _check_writable(cfg.out)
    started = time.perf_counter()
    tasks = [({'n': n}, (lambda n=n: interp_row(cfg, n))) for n in cfg.levels]
    logger.info('Interpolating %s (d=%d, m=%d) at levels %s', cfg.fn, cfg.d, cfg.m, list(cfg.levels))
    rows = asyncio.run(run_rows(cfg, tasks))
    return _finish_sweep(cfg, rows, lambda row: 2.0 ** row['n'], '2^n', started)


def run_build(cfg: ExperimentConfig) -> int:
    resolve(cfg.fn, cfg.d)
    _check_writable(cfg.out)
    _check_writable(cfg.dump_net)
    started = time.perf_counter()
    last = len(cfg.sweep) - 1
    tasks = [({'W': W, 'L': L}, (lambda W=W, L=L, i=i: build_row(cfg, W, L, cfg.dump_net if i == last else None)))
             for i, (W, L) in enumerate(cfg.sweep)]
    logger.info('Building %s networks for %s (d=%d, m=%d) over %d (W, L) pairs',
                'L_p' if cfg.norm == 'lp' else 'W^1_p', cfg.fn, cfg.d, cfg.m, len(tasks))
    rows = asyncio.run(run_rows(cfg, tasks))
    for row in rows:
        if row['status'] == 'ok':
            logger.info('W=%s L=%s: size (%s, %s), %s params, error %.3e, budget %s', row['W'], row['L'],
                        row['width'], row['depth'], humanize.intcomma(row['params']), row['error'],
                        'ok' if row['budget_ok'] else 'EXCEEDED')
    return _finish_sweep(cfg, rows, lambda row: float(row['W'] * row['L']), 'W*L', started)


def _size_scalar(row: Mapping[str, Any]) -> float:
    if pd.isna(row.get('W')) or pd.isna(row.get('L')):
        return 2.0 ** float(row['n'])
    return float(row['W']) * float(row['L'])


def run_rates(cfg: ExperimentConfig) -> int:
    """Fit log(error) against log(size) for an existing CSV report."""
    if cfg.input is None:
        raise ConfigError('rates needs --input PATH (a CSV report)')
    try:
        frame = pd.read_csv(cfg.input)
    except FileNotFoundError:
        raise ConfigError(f'no such report: {cfg.input}') from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f'cannot read {cfg.input}: {e}') from None
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigError(f'{cfg.input} lacks columns {missing}')
    report = RateReport([{k: (None if pd.isna(v) else v) for k, v in row.items()}
                         for row in frame.to_dict('records')])
    fit = report.fit_on(_size_scalar)
    if fit is None:
        raise ConfigError(f'{cfg.input} has fewer than 3 rows with a positive error')
    sys.stdout.write(f'slope={fit.slope:.6f} intercept={fit.intercept:.6f} r2={fit.r2:.6f} rows={fit.count}\n')
    return _slope_verdict(cfg, fit)


# --- gadget contract suite ---------------------------------------------------------

def _apply(faults: Optional[Mapping[str, Fault]], name: str, net: ReluNetwork) -> ReluNetwork:
    hook = (faults or {}).get(name)
    return hook(net) if hook is not None else net


def _box_samples(box: Box, count: int, seed: int) -> np.ndarray:
    lo, hi = np.array(box.lower), np.array(box.upper)
    return lo + (hi - lo) * np.random.default_rng(seed).random((count, len(lo)))


def _product_gradient(x: np.ndarray) -> np.ndarray:
    return np.stack([np.prod(np.delete(x, j, axis=1), axis=1) for j in range(x.shape[1])], axis=1)


def check_step(W: int, L: int, faults=None) -> ContractCheck:
    K = W * W * L * L
    net, contract = step_network(K, W, L, 1.0 / (4 * K))
    pts, cells = contract.region.sample(64)
    return check_contract(_apply(faults, 'step_network', net), contract, pts[:, None],
                          lambda _x: cells.astype(float))


def check_fitter(W: int, L: int, s: float, seed: int = 0, faults=None) -> ContractCheck:
    K = W * W * L * L
    xi = np.random.default_rng(seed + 97 * W + L).random(K)
    net, contract = point_fitter(xi, W, L, s)
    return check_contract(_apply(faults, 'point_fitter', net), contract, np.arange(K, dtype=float)[:, None],
                          lambda _x: xi)


def check_product2(W: int, L: int, a: float, faults=None) -> ContractCheck:
    net, contract = product2(W, L, a)
    return check_contract(_apply(faults, 'product2', net), contract, box_points(contract.region, 96),
                          lambda x: x[:, 0] * x[:, 1], lambda x: x[:, ::-1])


def check_zero_slice(W: int, L: int, a: float, faults=None) -> ContractCheck:
    """phi(0, y) must vanish up to rounding."""
    net, contract = product2(W, L, a)
    zero = GadgetContract('product2_zero_slice', contract.size, ZERO_SLICE_TOL, Norm.SUP, contract.region,
                          contract.params)
    ys = -a + 2.0 * a * (np.arange(257) + 0.5) / 257
    pts = np.column_stack([np.zeros_like(ys), ys])
    return check_contract(_apply(faults, 'product2', net), zero, pts, lambda x: np.zeros(len(x)), slack=0.0)


def check_product_multi(arity: int, W: int, L: int, seed: int = 0, c: float = 3.0, faults=None) -> ContractCheck:
    net, contract = product_multi(arity, c, W, L)
    pts = _box_samples(contract.region, 2000, seed)
    return check_contract(_apply(faults, 'product_multi', net), contract, pts, lambda x: np.prod(x, axis=1),
                          _product_gradient)


def check_partition(d: int, k: Sequence[int], W: int, L: int, seed: int = 0, faults=None) -> ContractCheck:
    K, n = W * W * L * L, choose_n(W, L)
    net, contract = partition_net(K, d, k, W, L, n)
    if d <= 2:
        pts = box_points(contract.region, 2048 if d == 1 else 128)
    else:
        pts = _box_samples(contract.region, 4000, seed)
    return check_contract(_apply(faults, 'partition_net', net), contract, pts, partition_g(K, d, k),
                          partition_g_gradient(K, d, k))


def _check_row(check: ContractCheck) -> dict:
    row = check.to_row()
    return {'gadget': row['name'], 'params': json.dumps(row['params'], sort_keys=True), 'norm': row['norm'],
            'width': row['width'], 'depth': row['depth'], 'width_bound': row['width_bound'],
            'depth_bound': row['depth_bound'], 'measured': row['measured'], 'bound': row['error_bound'],
            'margin': row['margin'], 'passed': row['passed']}


def _plain_row(gadget: str, params: dict, measured: Optional[float], bound: Optional[float], passed: bool) -> dict:
    row = {key: None for key in SUITE_COLUMNS}
    margin = None if measured is None or bound is None else bound - measured
    row.update(gadget=gadget, params=json.dumps(params, sort_keys=True), measured=measured, bound=bound,
               margin=margin, passed=passed)
    return row


def _support_row(K: int, k: tuple[int, ...], faults=None) -> dict:
    d = len(k)
    net, _ = partition_net(K, d, k, 1, 1, choose_n(1, 1))
    passed = support_localization_check(_apply(faults, 'partition_net', net), make_sine_product(d).evaluate,
                                        OmegaK(K, k))
    return _plain_row('support_localization', {'K': K, 'k': list(k)}, None, None, passed)


def _perturbation_row(m: int, eps: float, seed: int) -> dict:
    worst, bound = check_product_perturbation(m, eps, 10_000, seed)
    return _plain_row('product_perturbation', {'m': m, 'eps': eps}, worst, bound, worst <= bound)


def suite_cases(quick: bool = False, seed: int = 0, faults=None) -> Iterator[tuple[str, Callable[[], dict]]]:
    """The built-in parameter matrix, one (label, thunk) per contract check."""
    sizes = (1, 2) if quick else (1, 2, 3)
    lengths = (1,) if quick else (1, 2, 3)
    for W in sizes:
        for L in lengths:
            yield f'step W={W} L={L}', lambda W=W, L=L: _check_row(check_step(W, L, faults))
            for s in (1, 3):
                yield f'fitter W={W} L={L} s={s}', lambda W=W, L=L, s=s: _check_row(
                    check_fitter(W, L, s, seed, faults))
            for a in (2.0, 4.0):
                yield f'product2 W={W} L={L} a={a:g}', lambda W=W, L=L, a=a: _check_row(
                    check_product2(W, L, a, faults))
            yield f'zero slice W={W} L={L}', lambda W=W, L=L: _check_row(check_zero_slice(W, L, 2.0, faults))
            for kind in (1, 2):
                yield f'partition d=1 k={kind} W={W} L={L}', lambda W=W, L=L, kind=kind: _check_row(
                    check_partition(1, (kind,), W, L, seed, faults))
    multi = [(3, W, L) for W in sizes for L in ((1,) if quick else (1, 2, 3))]
    if not quick:
        multi += [(4, W, L) for W in sizes for L in (1, 2)]
    for arity, W, L in multi:
        yield f'product_multi arity={arity} W={W} L={L}', lambda arity=arity, W=W, L=L: _check_row(
            check_product_multi(arity, W, L, seed, faults=faults))
    partitions = [(2, (1, 2), 1)] if quick else [(2, k, W) for W in (1, 2) for k in ((1, 1), (1, 2), (2, 1), (2, 2))]
    if not quick:
        partitions += [(3, (1, 2, 1), 1), (3, (2, 2, 2), 1)]
    for d, k, W in partitions:
        yield f'partition d={d} k={k} W={W}', lambda d=d, k=k, W=W: _check_row(
            check_partition(d, k, W, 1, seed, faults))
    for K, k in ([(2, (1,)), (4, (2,))] if quick else [(2, (1,)), (2, (2,)), (4, (1,)), (4, (2,)), (2, (1, 2))]):
        yield f'support K={K} k={k}', lambda K=K, k=k: _support_row(K, k, faults)
    for m in range(1, 7):
        for eps in (1e-2, 1e-4):
            yield f'perturbation m={m} eps={eps:g}', lambda m=m, eps=eps: _perturbation_row(m, eps, seed)


def run_gadget_suite(cfg: Optional[ExperimentConfig] = None, quick: bool = False,
                     faults: Optional[Mapping[str, Fault]] = None) -> tuple[list[dict], int]:
    """Check every gadget contract over the parameter matrix; exit status 2 iff any check fails.

    ``faults`` maps a gadget name to a function that tampers with the built
    network before it is measured.
    """
    cfg = cfg or ExperimentConfig(command='gadgets')
    _check_writable(cfg.out)
    started = time.perf_counter()
    rows = []
    for label, case in suite_cases(quick, cfg.seed, faults):
        try:
            row = case()
        except Exception as e:
            logger.exception('Gadget check %s raised', label)
            row = _plain_row(label.split()[0], {'case': label, 'error': f'{type(e).__name__}: {e}'}, None, None,
                             False)
        logger.debug('%s: %s', label, 'ok' if row['passed'] else 'FAILED')
        rows.append(row)
    if cfg.format == 'json':
        _write_text(cfg.out, json.dumps({'meta': {'command': 'gadgets', 'version': __version__, 'quick': quick},
                                         'rows': rows}, indent=2) + '\n')
    else:
        _write_text(cfg.out, rows_to_csv(rows, SUITE_COLUMNS))
    failures = [f"{row['gadget']} {row['params']}" for row in rows if not row['passed']]
    logger.info('Gadget suite: %d checks, %d failed, %s', len(rows), len(failures),
                humanize.naturaldelta(time.perf_counter() - started))
    for failure in failures:
        logger.error('Contract failed: %s', failure)
    return rows, EXIT_CONTRACT if failures else EXIT_OK


# --- checkpoint housekeeping --------------------------------------------------------

RUN_COLUMNS = ('run_key', 'command', 'version', 'created', 'rows')


def _match_run(runs: Sequence[Mapping[str, Any]], prefix: str) -> str:
    hits = [r['run_key'] for r in runs if r['run_key'].startswith(prefix)]
    if len(hits) != 1:
        what = 'no run' if not hits else f'{len(hits)} runs'
        raise ConfigError(f'{what} match {prefix!r}; list them with `korobov runs`')
    return hits[0]


async def _runs(cfg: ExperimentConfig, clear: Optional[str]) -> list[dict]:
    store = CheckpointStore(cfg.checkpoint)
    await store.init()
    runs = await store.list_runs()
    if clear is not None:
        await store.clear_run(_match_run(runs, clear))
        runs = await store.list_runs()
    return runs


def run_runs(cfg: ExperimentConfig, clear: Optional[str] = None) -> int:
    """List the sweeps recorded in the checkpoint file, optionally dropping one (a unique key prefix is enough)."""
    if cfg.checkpoint is None:
        raise ConfigError('no checkpoint file; pass --checkpoint or set KOROBOV_CHECKPOINT_DB')
    if not Path(cfg.checkpoint).exists():
        raise ConfigError(f'checkpoint file {cfg.checkpoint} does not exist')
    _check_writable(cfg.out)
    runs = asyncio.run(_runs(cfg, clear))
    for run in runs:
        run['created'] = time.strftime('%Y-%m-%dT%H:%M:%S', time.localtime(run.pop('created_at')))
    if cfg.format == 'json':
        _write_text(cfg.out, json.dumps({'meta': {'command': 'runs', 'version': __version__}, 'runs': runs},
                                        indent=2) + '\n')
    else:
        _write_text(cfg.out, rows_to_csv(runs, RUN_COLUMNS))
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise ConfigError(f'{self.prog}: {message}')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='korobov', description='Compile Korobov functions into ReLU networks and check the rates.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING, ... (default: $LOG_LEVEL or INFO)')
    sub = parser.add_subparsers(dest='command', required=True)
    commands = {
        'interp': 'sparse-grid interpolation error over a level sweep',
        'build': 'construct networks over a (W, L) sweep and measure them',
        'gadgets': 'check every gadget contract over the built-in matrix',
        'rates': 'fit the convergence slope of an existing CSV report',
        'runs': 'list or clear the sweeps stored in a checkpoint file',
    }
    for name, text in commands.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument('--config', type=Path, default=None, help='TOML file; flags override its values')
        p.add_argument('--out', type=Path, default=None, help='report path (default: stdout)')
        p.add_argument('--format', choices=FORMATS, default=None)
        p.add_argument('--seed', type=int, default=None)
        if name in ('interp', 'build'):
            p.add_argument('--fn', default=None, help="sine, bubble or aniso:w1,...,wd")
            p.add_argument('--d', type=int, default=None)
            p.add_argument('--m', type=int, default=None, help='smoothness order, 2 or 3')
            p.add_argument('--p', type=float, default=None, help='error norm exponent, 1 <= p < inf')
            p.add_argument('--norm', choices=NORMS, default=None)
            p.add_argument('--samples', dest='resolution', type=int, default=None,
                           help='quadrature points per axis (grid) or samples (mc)')
            p.add_argument('--mode', choices=('grid', 'mc'), default=None)
            p.add_argument('--workers', type=int, default=None)
            p.add_argument('--checkpoint', type=Path, default=None, help='SQLite file for resumable sweeps')
            p.add_argument('--no-checkpoint', action='store_true', default=None)
        if name == 'interp':
            p.add_argument('--levels', default=None, help='level budgets, e.g. 2-8 or 2,4,6')
        if name == 'build':
            p.add_argument('--sweep', default=None, help='W1xL1,W2xL2,...')
            p.add_argument('--dump-net', type=Path, default=None, help='save the last network as JSON')
        if name in ('interp', 'build', 'rates'):
            p.add_argument('--max-slope', type=float, default=None, help='exit 2 unless the fitted slope is <= this')
        if name == 'rates':
            p.add_argument('--input', type=Path, default=None, help='CSV report to fit')
        if name == 'gadgets':
            p.add_argument('--quick', action='store_true', help='reduced parameter matrix')
        if name == 'runs':
            p.add_argument('--checkpoint', type=Path, default=None, help='SQLite checkpoint file to inspect')
            p.add_argument('--clear', metavar='RUN_KEY', default=None, help='drop this run (a unique key prefix)')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        sys.stderr.write(f'{e}\n')
        return EXIT_CONFIG
    try:
        setup_logging(args.log_level)
    except ConfigError as e:
        sys.stderr.write(f'{e}\n')
        return EXIT_CONFIG
    flags = {k: v for k, v in vars(args).items() if k not in ('command', 'log_level', 'quick', 'clear')}
    try:
        cfg = load_config(args.command, flags)
        if args.command == 'runs':
            return run_runs(cfg, args.clear)
        if args.command == 'interp':
            return run_interp(cfg)
        if args.command == 'build':
            return run_build(cfg)
        if args.command == 'rates':
            return run_rates(cfg)
        _, code = run_gadget_suite(cfg, quick=args.quick)
        return code
    except ConfigError as e:
        logger.error('%s', e)
        return EXIT_CONFIG
    except ContractViolation as e:
        logger.error('%s', e)
        return EXIT_CONTRACT
