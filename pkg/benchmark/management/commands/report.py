import os

from django.core.management.base import BaseCommand

from benchmark import metrics
from benchmark.harness import command_errors, read_report, resolve_path
from benchmark.models import RunManifest, file_hash


class Command(BaseCommand):
    help = "Merge evaluation reports into one tracker comparison table"

    def add_arguments(self, parser):
        parser.add_argument('reports', nargs='+', help='Report JSON files written by eval')
        parser.add_argument('--out', default=None, help='Also write the table to this file')

    def handle(self, *args, **options):
        paths = [resolve_path(path) for path in options['reports']]
        with command_errors():
            reports = [read_report(path) for path in paths]
        table = metrics.format_comparison(reports)

        out = resolve_path(options['out'])
        if out:
            with open(out, 'w', encoding='utf8') as f:
                f.write(table + '\n')
        directory = os.path.dirname(os.path.abspath(out or paths[0]))
        RunManifest.record('report', directory, output_paths=[out] if out else [],
                           config_hashes={path: file_hash(path) for path in paths})
        self.stdout.write(table)
