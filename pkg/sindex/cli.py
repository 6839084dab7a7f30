import dataclasses
import json
import logging
import os

import click
from click.core import ParameterSource
import pandas as pd
import tensorflow as tf

import sindex._parameter_descriptions as desc
from sindex.acceptance import run_suite
from sindex.cli_util import (
    common_options, emit_table, model_options, output_options,
    resolve_options, sindex_globals, teacher_link, train_options
)
from sindex.data_utils import make_teacher, sample_dataset
from sindex.exceptions import DivergenceError, NumericalError
from sindex.features import Activation, sample_bank
from sindex.harness import load_config, default_config, run_experiment
from sindex.hermite import relu_coeffs_closed_form
from sindex.landscape import (
    build_oracle, find_critical_points, m_grid, monotonicity_break, scan
)
from sindex.model import ModelState
from sindex.plots import emit_plots
from sindex.train import (
    TrainConfig, excess_risk, fine_tune_ridge, init_state, run_two_phase
)


@click.group()
class cli:
    pass


def _progress(quiet):
    if quiet:
        return None
    return lambda message: click.echo(message, err=True)


def _say(progress, message):
    if progress is not None:
        progress(message)


def _problem(values, config):
    teacher = make_teacher(teacher_link(values, config), values['d'],
                           values['seed'], sigma=values['sigma'],
                           J=values['J'])
    bank = sample_bank(values['N'], values['tau'], values['seed'],
                       Activation.parse(values['activation']))
    return teacher, bank


def _train_config(values):
    return TrainConfig(
        lam=values['lam'],
        step_theta=values['step_theta'],
        step_ratio=values['step_ratio'],
        T0_steps=values['t0'],
        T1_steps=values['t1'],
        record_every=values['record_every'],
        schedule=values['schedule'],
        backoff=values['backoff'],
        seed=values['seed']
    )


def _write_trace(trace, fmt, out):
    path = os.path.join(out, f'trace.{fmt}')
    if fmt == 'json':
        trace.records.to_json(path, orient='records', indent=2)
    else:
        trace.to_csv(path)
    return path


@cli.command()
@common_options
@model_options
@train_options
@output_options
@click.pass_context
def train(ctx, config_path, **params):
    """Train (c, theta) by gradient descent and write the trace and the
    final state."""
    values, config = resolve_options(ctx, config_path, params)
    progress = _progress(values['quiet'])
    out = values['out']
    os.makedirs(out, exist_ok=True)
    teacher, bank = _problem(values, config)
    data = sample_dataset(teacher, values['n'], values['d'], values['seed'])
    train_config = _train_config(values)
    state0 = init_state(train_config, bank, values['d'], values['seed'],
                        values['s'])
    _say(progress, f"training d={values['d']} s={values['s']} "
                   f"n={values['n']} N={values['N']} for "
                   f"{train_config.total_steps} steps")
    try:
        trace = run_two_phase(state0, train_config, bank, data, teacher)
    except DivergenceError as e:
        if e.trace is not None:
            _write_trace(e.trace, values['fmt'], out)
        raise
    _write_trace(trace, values['fmt'], out)
    state = trace.final_state
    with open(os.path.join(out, 'state.json'), 'w') as f:
        json.dump({
            'state': state.to_dict(),
            'bank_digest': bank.digest(),
            'teacher_digest': teacher.digest(),
            'train': train_config.to_dict()
        }, f, indent=2)
    risk, se = excess_risk(state, bank, teacher, values['n_test'],
                           values['seed'])
    summary = pd.DataFrame([{
        'final_m': trace.final_m,
        'abs_m': abs(trace.final_m),
        'train_loss': trace.final_loss,
        'risk': risk,
        'risk_se': se,
        'rejected_steps': trace.rejected_steps
    }])
    emit_table(summary, values['fmt'])


@cli.command()
@common_options
@model_options
@output_options
@click.option(
    '--state',
    'state_path',
    required=True,
    help=desc.STATE_DESC,
    type=click.Path(exists=True, dir_okay=False)
)
@click.option(
    '--lam-prime',
    default=1e-3,
    show_default=True,
    help=desc.LAM_PRIME_DESC,
    type=click.FloatRange(min=0.0, min_open=True)
)
@click.option(
    '--n-finetune',
    default=None,
    type=click.IntRange(min=1)
)
@click.pass_context
def finetune(ctx, config_path, state_path, n_finetune, **params):
    """Refit c by ridge regression on a fresh sample, keeping theta."""
    values, config = resolve_options(ctx, config_path, params)
    with open(state_path) as f:
        saved = json.load(f)
    teacher, bank = _problem(values, config)
    for name, digest in (('bank', bank.digest()),
                         ('teacher', teacher.digest())):
        if saved.get(f'{name}_digest') != digest:
            raise click.BadParameter(
                f"state was trained with a different {name}; pass the "
                "options used for `train`",
                param_hint='--state'
            )
    state = ModelState.from_dict(saved['state'])
    n_fresh = n_finetune or config.n_finetune or values['n']
    fresh = sample_dataset(teacher, n_fresh, values['d'], values['seed'],
                           stream='finetune')
    c = fine_tune_ridge(state.theta, bank, fresh, values['lam_prime'])
    tuned = dataclasses.replace(state, c=c)
    out = values['out']
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, 'finetuned_state.json'), 'w') as f:
        json.dump({**saved, 'state': tuned.to_dict(),
                   'lam_prime': values['lam_prime']}, f, indent=2)
    risk_pre, se_pre = excess_risk(state, bank, teacher, values['n_test'],
                                   values['seed'])
    risk_post, se_post = excess_risk(tuned, bank, teacher, values['n_test'],
                                     values['seed'])
    _say(_progress(values['quiet']),
         f"refit on {n_fresh} fresh samples with lambda'="
         f"{values['lam_prime']:g}")
    summary = pd.DataFrame([{
        'abs_m': abs(state.overlap(teacher.theta_star)),
        'risk_pre': risk_pre,
        'risk_pre_se': se_pre,
        'risk_post': risk_post,
        'risk_post_se': se_post
    }])
    emit_table(summary, values['fmt'])


@cli.command()
@common_options
@model_options
@output_options
@click.option(
    '--lam',
    default=1e-3,
    show_default=True,
    type=click.FloatRange(min=0.0, min_open=True)
)
@click.option(
    '--m-grid',
    'grid_points',
    default=201,
    show_default=True,
    help=desc.M_GRID_DESC,
    type=click.IntRange(min=2)
)
@click.option(
    '--lams',
    multiple=True,
    help=desc.LAMS_DESC,
    type=click.FloatRange(min=0.0, min_open=True)
)
@click.option(
    '--backend',
    default='quadrature',
    show_default=True,
    type=click.Choice(sindex_globals['backends'])
)
@click.option(
    '--plots',
    is_flag=True,
    default=False,
    help=desc.PLOTS_DESC
)
@click.pass_context
def landscape(ctx, config_path, grid_points, lams, backend, plots,
              **params):
    """Scan the projected population loss over a uniform m-grid."""
    values, config = resolve_options(ctx, config_path, params)
    progress = _progress(values['quiet'])
    out = values['out']
    os.makedirs(out, exist_ok=True)
    teacher, bank = _problem(values, config)
    oracle = build_oracle(teacher, bank, values['lam'], backend=backend)
    grid = m_grid(grid_points)
    table = scan(oracle, grid)
    roots = find_critical_points(oracle, grid)
    _say(progress, "interior critical points: "
                   + (", ".join(f"{m:.6g}" for m in roots) or "none"))
    if lams:
        threshold, monotone = monotonicity_break(oracle, sorted(lams))
        monotone.to_csv(os.path.join(out, 'monotonicity.csv'), index=False)
        _say(progress, "monotone for every lambda tested"
             if threshold is None
             else f"monotonicity first breaks at lambda={threshold:g}")
    if plots:
        emit_plots(table.assign(lam=values['lam']), 'landscape_scan', out)
    emit_table(table, values['fmt'],
               os.path.join(out, f"landscape.{values['fmt']}"))


@cli.command()
@click.option(
    '--config',
    'config_path',
    default=None,
    help=desc.CONFIG_DESC,
    type=click.Path(exists=True, dir_okay=False)
)
@click.option(
    '--seed',
    default=None,
    help=desc.SEED_DESC,
    type=int
)
@output_options
@click.option(
    '--threads',
    default=None,
    help=desc.THREADS_DESC,
    type=click.IntRange(min=1)
)
@click.option(
    '--plots',
    is_flag=True,
    default=False,
    help=desc.PLOTS_DESC
)
@click.pass_context
def experiment(ctx, config_path, seed, out, fmt, quiet, threads, plots):
    """Run the sweep of a config and write results, timings and the
    hyperparameter selection."""
    config = default_config() if config_path is None \
        else load_config(config_path)
    if seed is not None:
        config = config.replace(base_seed=seed)
    if ctx.get_parameter_source('out') == ParameterSource.COMMANDLINE:
        config = config.replace(out_dir=out)
    table = run_experiment(config, threads=threads,
                           progress=_progress(quiet))
    if plots:
        for kind in ('risk_vs_n', 'm_vs_n'):
            emit_plots(table, kind, config.out_dir)
    emit_table(table[table['kind'] == 'aggregate'], fmt)


@cli.command()
@click.option(
    '--config',
    'config_path',
    default=None,
    help=desc.CONFIG_DESC,
    type=click.Path(exists=True, dir_okay=False)
)
@click.option(
    '--relu',
    is_flag=True,
    default=False,
    help=desc.RELU_DESC
)
@click.option(
    '--max-order',
    default=8,
    show_default=True,
    help=desc.MAX_ORDER_DESC,
    type=click.IntRange(min=0)
)
@click.option(
    '--link',
    default=None,
    help=desc.LINK_DESC,
    type=click.Choice(sindex_globals['links'])
)
@click.option(
    '--s',
    default=1,
    show_default=True,
    help=desc.S_DESC,
    type=click.IntRange(min=1)
)
@click.option(
    '--format',
    'fmt',
    default='csv',
    show_default=True,
    help=desc.FORMAT_DESC,
    type=click.Choice(sindex_globals['formats'])
)
def hermite(config_path, relu, max_order, link, s, fmt):
    """Print Hermite coefficients alpha_0..alpha_max-order of the ReLU or
    of the normalized teacher link."""
    if relu:
        coeffs = relu_coeffs_closed_form(max_order).coeffs
    else:
        config = default_config() if config_path is None \
            else load_config(config_path)
        values = {'link': link, 's': s}
        J = max(config.J, max_order)
        teacher = make_teacher(teacher_link(values, config), 2, 0,
                               sigma=0.0, J=J, fixed_direction=True)
        coeffs = teacher.series.coeffs[:max_order + 1]
    table = pd.DataFrame({'j': range(len(coeffs)), 'alpha': coeffs})
    emit_table(table, fmt)


@cli.command()
@click.option(
    '--suite',
    default='invariants',
    show_default=True,
    help=desc.SUITE_DESC,
    type=click.Choice(sindex_globals['suites'])
)
@click.option(
    '--quiet',
    is_flag=True,
    default=False,
    help=desc.QUIET_DESC
)
@click.pass_context
def check(ctx, suite, quiet):
    """Run an acceptance suite; exits with status 2 when a check fails."""
    results = run_suite(suite, progress=_progress(quiet))
    table = pd.DataFrame([dataclasses.asdict(r) for r in results],
                         columns=['name', 'passed', 'detail'])
    emit_table(table, 'csv')
    if not table['passed'].all():
        ctx.exit(2)


def main(argv=None):
    """Entry point. Returns 0 on success, 1 on usage errors and 2 on
    numerical failures or failed checks."""
    logging.basicConfig(
        level=os.environ.get('SINDEX_LOG_LEVEL', 'WARNING').upper(),
        format='%(levelname)s %(name)s: %(message)s'
    )
    tf.config.experimental.enable_op_determinism()
    try:
        status = cli.main(args=argv, prog_name='sindex',
                          standalone_mode=False)
    except click.exceptions.Abort:
        click.echo('Aborted!', err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except NumericalError as e:
        click.echo(f'Error: {type(e).__name__}: {e}', err=True)
        return 2
    except (ValueError, OSError) as e:
        click.echo(f'Error: {e}', err=True)
        return 1
    return status if isinstance(status, int) else 0


if __name__ == '__main__':
    raise SystemExit(main())
