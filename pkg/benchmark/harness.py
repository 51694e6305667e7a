"""
Plumbing shared by the management commands: path resolution, loading split
sequences, the train / track / evaluate steps and the exit code mapping.
"""
import json
import logging
import os
from contextlib import contextmanager

from django.conf import settings
from django.core.management.base import CommandError

from benchmark import dataio, metrics
from benchmark.exceptions import ConfigurationError, FormatError, InvalidArgument, ProtocolViolation
from benchmark.trackers.base import get_trackers, run_tracker
from nncore.exceptions import CheckpointError
from nncore.exceptions import InvalidArgument as TensorArgumentError
from prot3d.config import TrackerConfig, load_config
from prot3d.training import save_checkpoint, train, write_training_log

# Per module logger
logger = logging.getLogger(__name__)

EXIT_PROTOCOL_VIOLATION = 1
EXIT_FORMAT_ERROR = 2


@contextmanager
def command_errors():
    """Turn domain errors into CommandErrors carrying the documented exit codes."""
    try:
        yield
    except ProtocolViolation as e:
        raise CommandError('protocol violation: %s' % e, returncode=EXIT_PROTOCOL_VIOLATION)
    except (FormatError, ConfigurationError, CheckpointError, InvalidArgument, TensorArgumentError) as e:
        raise CommandError(str(e), returncode=EXIT_FORMAT_ERROR)


def resolve_path(path):
    """Relative paths are taken relative to SOT_DATA_ROOT."""
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(str(settings.SOT_DATA_ROOT), path)


def load_sequences(data_dir, split_path=None, split_name='test'):
    """Sequences of one split, or every sequence under data_dir without a split file."""
    if split_path:
        ids = dataio.read_split(split_path, data_dir=data_dir).ids(split_name)
    else:
        ids = dataio.list_sequences(data_dir)
    return [dataio.read_sequence(os.path.join(data_dir, sequence_id)) for sequence_id in ids]


def load_tracker_config(path=None, **overrides):
    config = load_config(path) if path else TrackerConfig()
    overrides = {key: value for key, value in overrides.items() if value is not None}
    return config.replace(**overrides) if overrides else config


def train_tracker(sequences, config, checkpoint_path, seed=None):
    """Train, then write the checkpoint and its JSON-lines log; returns the log path."""
    run = train(sequences, config, seed=seed, log_wall_time=settings.SOT_LOG_WALL_TIME)
    os.makedirs(os.path.dirname(os.path.abspath(checkpoint_path)), exist_ok=True)
    save_checkpoint(checkpoint_path, run, config)
    log_path = checkpoint_path + '.log.jsonl'
    write_training_log(run.log, log_path)
    return run, log_path


def make_tracker(name, **options):
    available = get_trackers()
    if name not in available:
        raise ConfigurationError('unknown tracker %s, available: %s' % (name, ', '.join(sorted(available))))
    return available[name](options)


def track(tracker, sequences, out_dir, jobs=None):
    return run_tracker(tracker, sequences, out_dir, jobs=jobs or settings.SOT_JOBS)


def read_results_dir(results_dir, sequences):
    results = []
    for seq in sequences:
        path = os.path.join(results_dir, '%s.jsonl' % seq.sequence_id)
        if not os.path.exists(path):
            raise ProtocolViolation('no result file for sequence %s in %s' % (seq.sequence_id, results_dir))
        results.append(dataio.read_results(path))
    return results


def evaluate(results, sequences, jobs=None, tracker=None):
    return metrics.aggregate(results, sequences, jobs=jobs or settings.SOT_JOBS, tracker=tracker)


def write_report(report, path):
    """Write the JSON report and its text table next to it; returns both paths."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf8') as f:
        f.write(json.dumps(report.to_dict(), indent=2) + '\n')
    table_path = os.path.splitext(path)[0] + '.txt'
    with open(table_path, 'w', encoding='utf8') as f:
        f.write(metrics.format_table(report) + '\n')
    return path, table_path


def read_report(path):
    try:
        with open(path, 'r', encoding='utf8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise FormatError('report file is missing', path=path)
    except ValueError as e:
        raise FormatError('invalid JSON (%s)' % e, path=path)
    try:
        return metrics.report_from_dict(data)
    except KeyError as e:
        raise FormatError('missing key', path=path, field=e.args[0])
