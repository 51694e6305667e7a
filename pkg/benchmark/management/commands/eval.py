import os

from django.core.management.base import BaseCommand

from benchmark import metrics
from benchmark.harness import (command_errors, evaluate, load_sequences, read_results_dir, resolve_path,
                               write_report)
from benchmark.models import RunManifest


class Command(BaseCommand):
    help = "Evaluate a results directory against the ground truth of one split"

    def add_arguments(self, parser):
        parser.add_argument('--results', required=True, help='Results directory')
        parser.add_argument('--data', required=True, help='Dataset directory')
        parser.add_argument('--split', default=None, help='Split file, default <data>/split.json')
        parser.add_argument('--split-name', dest='split_name', default='test', choices=('train', 'test'))
        parser.add_argument('--out', required=True, help='Report JSON file; a .txt table is written next to it')
        parser.add_argument('--tracker', default=None, help='Tracker label stored in the report')
        parser.add_argument('--jobs', type=int, default=None, help='Worker processes, default SOT_JOBS')

    def handle(self, *args, **options):
        data_dir = resolve_path(options['data'])
        split_path = resolve_path(options['split']) or os.path.join(data_dir, 'split.json')
        results_dir = resolve_path(options['results'])
        out = resolve_path(options['out'])
        with command_errors():
            sequences = load_sequences(data_dir, split_path, options['split_name'])
            results = read_results_dir(results_dir, sequences)
            tracker = options['tracker'] or os.path.basename(os.path.normpath(results_dir))
            report = evaluate(results, sequences, jobs=options['jobs'], tracker=tracker)
            paths = write_report(report, out)

        RunManifest.record('eval', os.path.dirname(os.path.abspath(out)), output_paths=list(paths))
        self.stdout.write(metrics.format_table(report))
