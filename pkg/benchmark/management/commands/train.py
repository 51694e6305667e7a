import os

from django.core.management.base import BaseCommand

from benchmark.harness import command_errors, load_sequences, load_tracker_config, resolve_path, train_tracker
from benchmark.models import RunManifest


class Command(BaseCommand):
    help = "Train the prot3d tracker on the training split and write a checkpoint"

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help='Dataset directory')
        parser.add_argument('--split', default=None, help='Split file, default <data>/split.json')
        parser.add_argument('--config', default=None, help='Tracker config JSON')
        parser.add_argument('--out', required=True, help='Checkpoint file')
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--epochs', type=int, default=None, help='Override the configured epoch count')

    def handle(self, *args, **options):
        data_dir = resolve_path(options['data'])
        split_path = resolve_path(options['split']) or os.path.join(data_dir, 'split.json')
        out = resolve_path(options['out'])
        with command_errors():
            config = load_tracker_config(resolve_path(options['config']), epochs=options['epochs'],
                                         seed=options['seed'])
            sequences = load_sequences(data_dir, split_path, 'train')
            run, log_path = train_tracker(sequences, config, out)

        RunManifest.record('train', os.path.dirname(os.path.abspath(out)), seed=config.seed,
                           config_hashes={'tracker': config.config_hash()}, output_paths=[out, log_path])
        first, last = run.log[0]['loss'], run.log[-1]['loss']
        self.stdout.write('Trained %d epochs on %d sequences: loss %.5f -> %.5f, checkpoint %s'
                          % (len(run.log), len(sequences), first, last, out))
