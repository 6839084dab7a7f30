import json

import click
from click.core import ParameterSource

import sindex._parameter_descriptions as desc
from sindex.data_utils import LinkSpec
from sindex.harness import default_config, load_config


def _sindex_globals():
    return {
        'links': ['piecewise_linear', 'relu', 'hermite_monomial'],
        'schedules': ['two_phase', 'vanilla'],
        'formats': ['csv', 'json'],
        'backends': ['quadrature', 'exact'],
        'suites': ['invariants', 'oracles', 'recovery', 'determinism', 'all']
    }


sindex_globals = _sindex_globals()


def _apply(func, options):
    for option in reversed(options):
        func = option(func)
    return func


def common_options(func):
    options = [
        click.option(
            '--config',
            'config_path',
            default=None,
            help=desc.CONFIG_DESC,
            type=click.Path(exists=True, dir_okay=False)
        ),
        click.option(
            '--seed',
            default=0,
            show_default=True,
            help=desc.SEED_DESC,
            type=int
        ),
    ]
    return _apply(func, options)


def model_options(func):
    options = [
        click.option(
            '--d',
            default=10,
            show_default=True,
            type=click.IntRange(min=2)
        ),
        click.option(
            '--s',
            default=1,
            show_default=True,
            help=desc.S_DESC,
            type=click.IntRange(min=1)
        ),
        click.option(
            '--n',
            default=1024,
            show_default=True,
            type=click.IntRange(min=1)
        ),
        click.option(
            '--N',
            'N',
            default=100,
            show_default=True,
            type=click.IntRange(min=1)
        ),
        click.option(
            '--tau',
            default=2.0,
            show_default=True,
            type=float
        ),
        click.option(
            '--sigma',
            default=0.001,
            show_default=True,
            type=click.FloatRange(min=0.0)
        ),
        click.option(
            '--link',
            default='piecewise_linear',
            show_default=True,
            help=desc.LINK_DESC,
            type=click.Choice(sindex_globals['links'])
        ),
        click.option(
            '--activation',
            default='relu',
            show_default=True,
            help=desc.ACTIVATION_DESC,
            type=str
        ),
        click.option(
            '--J',
            'J',
            default=64,
            show_default=True,
            type=click.IntRange(min=1)
        ),
        click.option(
            '--n-test',
            default=10000,
            show_default=True,
            type=click.IntRange(min=2)
        ),
    ]
    return _apply(func, options)


def train_options(func):
    options = [
        click.option(
            '--lam',
            default=1e-3,
            show_default=True,
            type=click.FloatRange(min=0.0, min_open=True)
        ),
        click.option(
            '--step-theta',
            default=1.0,
            show_default=True,
            type=click.FloatRange(min=0.0, min_open=True)
        ),
        click.option(
            '--step-ratio',
            default=100.0,
            show_default=True,
            type=click.FloatRange(min=0.0, min_open=True)
        ),
        click.option(
            '--t0',
            default=500,
            show_default=True,
            type=click.IntRange(min=0)
        ),
        click.option(
            '--t1',
            default=9500,
            show_default=True,
            type=click.IntRange(min=0)
        ),
        click.option(
            '--record-every',
            default=100,
            show_default=True,
            type=click.IntRange(min=1)
        ),
        click.option(
            '--schedule',
            default='two_phase',
            show_default=True,
            help=desc.SCHEDULE_DESC,
            type=click.Choice(sindex_globals['schedules'])
        ),
        click.option(
            '--backoff/--no-backoff',
            default=True,
            show_default=True
        ),
    ]
    return _apply(func, options)


def output_options(func):
    options = [
        click.option(
            '--out',
            default='results',
            show_default=True,
            help=desc.OUT_DESC,
            type=click.Path(file_okay=False)
        ),
        click.option(
            '--format',
            'fmt',
            default='csv',
            show_default=True,
            help=desc.FORMAT_DESC,
            type=click.Choice(sindex_globals['formats'])
        ),
        click.option(
            '--quiet',
            is_flag=True,
            default=False,
            help=desc.QUIET_DESC
        ),
    ]
    return _apply(func, options)


def _config_values(config):
    cell = config.cells()[0]
    train = config.train
    return {
        'd': cell['d'],
        's': cell['s'],
        'n': cell['n'],
        'N': cell['N'],
        'tau': config.tau,
        'sigma': config.sigma,
        'activation': config.activation,
        'J': config.J,
        'n_test': config.n_test,
        'lam': cell['lam'],
        'lam_prime': cell['lam_prime'],
        'step_theta': cell['step_theta'],
        'step_ratio': train.step_ratio,
        't0': train.T0_steps,
        't1': train.T1_steps,
        'record_every': train.record_every,
        'schedule': train.schedule,
        'backoff': train.backoff,
        'seed': config.base_seed,
        'out': config.out_dir
    }


def resolve_options(ctx, config_path, params):
    """Merge `params` over the values of the config at `config_path`.

    Only options given on the command line override the config. Returns
    the merged values and the ExperimentConfig they came from.
    """
    config = default_config() if config_path is None \
        else load_config(config_path)
    if config_path is None:
        return dict(params), config
    values = dict(params)
    for name, value in _config_values(config).items():
        if name not in values:
            continue
        source = ctx.get_parameter_source(name)
        if source not in (ParameterSource.COMMANDLINE,
                          ParameterSource.ENVIRONMENT):
            values[name] = value
    if ctx.get_parameter_source('link') != ParameterSource.COMMANDLINE:
        values['link'] = None
    return values, config


def teacher_link(values, config):
    """The link for information exponent `values['s']`."""
    kind = values.get('link')
    if kind is None:
        base = config.link
    elif kind == 'hermite_monomial':
        base = LinkSpec.hermite_monomial(values['s'])
    elif kind == 'relu':
        base = LinkSpec.relu()
    else:
        base = LinkSpec.piecewise_linear()
    return config.replace(link=base).link_for(values['s'])


def emit_table(table, fmt, path=None):
    """Echo `table` to stdout in `fmt` and write it to `path` if given."""
    if fmt == 'json':
        text = json.dumps(table.to_dict(orient='records'), indent=2)
    else:
        text = table.to_csv(index=False)
    if path is not None:
        with open(path, 'w') as f:
            f.write(text)
    click.echo(text.rstrip('\n'))
