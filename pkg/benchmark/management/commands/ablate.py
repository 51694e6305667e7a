import os

from django.core.management.base import BaseCommand

from benchmark import metrics
from benchmark.harness import (command_errors, evaluate, load_sequences, load_tracker_config, make_tracker,
                               resolve_path, track, train_tracker, write_report)
from benchmark.models import RunManifest
from prot3d.config import ARMS

AXES = {
    'stages': ('N', [('N=%d' % n, {'stages': n}) for n in (1, 2, 3)]),
    'memory': ('K', [('K=%d' % k, {'memory_size': k}) for k in (2, 3, 4)]),
    'arms': ('arm', [(arm, ARMS[arm]) for arm in sorted(ARMS)]),
}


class Command(BaseCommand):
    help = "Train, track and evaluate one tracker per cell of an ablation grid"

    def add_arguments(self, parser):
        parser.add_argument('--axis', required=True, choices=sorted(AXES))
        parser.add_argument('--data', required=True, help='Dataset directory')
        parser.add_argument('--split', default=None, help='Split file, default <data>/split.json')
        parser.add_argument('--config', default=None, help='Base tracker config JSON')
        parser.add_argument('--out', required=True, help='Output directory, one subdirectory per cell')
        parser.add_argument('--epochs', type=int, default=None, help='Override the configured epoch count')
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--jobs', type=int, default=None, help='Worker processes, default SOT_JOBS')

    def handle(self, *args, **options):
        data_dir = resolve_path(options['data'])
        split_path = resolve_path(options['split']) or os.path.join(data_dir, 'split.json')
        out_dir = resolve_path(options['out'])
        label, cells = AXES[options['axis']]

        reports, config_hashes, timings, outputs = [], {}, {}, []
        with command_errors():
            base = load_tracker_config(resolve_path(options['config']), epochs=options['epochs'],
                                       seed=options['seed'])
            train_sequences = load_sequences(data_dir, split_path, 'train')
            test_sequences = load_sequences(data_dir, split_path, 'test')
            for name, changes in cells:
                config = base.replace(**changes)
                cell_dir = os.path.join(out_dir, name)
                checkpoint = os.path.join(cell_dir, 'model.ckpt')
                self.stdout.write('Cell %s: training %d epochs' % (name, config.epochs))
                train_tracker(train_sequences, config, checkpoint)
                tracker = make_tracker('prot3d', checkpoint=checkpoint)
                results, cell_timings = track(tracker, test_sequences, os.path.join(cell_dir, 'results'),
                                              jobs=options['jobs'])
                report = evaluate(results, test_sequences, jobs=options['jobs'], tracker=name)
                outputs.extend(write_report(report, os.path.join(cell_dir, 'report.json')))
                reports.append(report)
                config_hashes[name] = config.config_hash()
                timings[name] = cell_timings

        table = metrics.format_comparison(reports, label=label)
        table_path = os.path.join(out_dir, 'ablation_%s.txt' % options['axis'])
        with open(table_path, 'w', encoding='utf8') as f:
            f.write(table + '\n')
        RunManifest.record('ablate', out_dir, seed=base.seed, config_hashes=config_hashes, timings=timings,
                           output_paths=outputs + [table_path])
        self.stdout.write(table)
