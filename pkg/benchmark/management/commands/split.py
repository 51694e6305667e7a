import os

from django.core.management.base import BaseCommand

from benchmark import dataio
from benchmark.harness import command_errors, resolve_path
from benchmark.metrics import render_table
from benchmark.models import RunManifest


class Command(BaseCommand):
    help = "Make a stratified train/test split of the sequences in a dataset directory"

    def add_arguments(self, parser):
        parser.add_argument('--dir', required=True, help='Dataset directory')
        parser.add_argument('--fraction', type=float, default=0.7, help='Training fraction')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--out', default=None, help='Split file, default <dir>/split.json')

    def handle(self, *args, **options):
        data_dir = resolve_path(options['dir'])
        out = resolve_path(options['out']) or os.path.join(data_dir, 'split.json')
        with command_errors():
            sequences = {i: dataio.read_sequence(os.path.join(data_dir, i)) for i in dataio.list_sequences(data_dir)}
            categories = {i: seq.meta.category for i, seq in sequences.items()}
            manifest = dataio.make_split(list(sequences), options['fraction'], options['seed'], categories=categories)
            dataio.write_split(manifest, out)

        RunManifest.record('split', os.path.dirname(os.path.abspath(out)), seed=options['seed'], output_paths=[out])
        rows = [(row['split'], row['sequences'], row['frames'], '%.1f' % row['average_frames'], row['classes'])
                for row in dataio.split_statistics(manifest, sequences)]
        self.stdout.write(render_table(('split', 'sequences', 'frames', 'avg frames', 'classes'), rows))
