import os

from django.core.management.base import BaseCommand

from benchmark.harness import command_errors, load_sequences, make_tracker, resolve_path, track
from benchmark.models import RunManifest, file_hash
from benchmark.trackers.base import get_trackers


class Command(BaseCommand):
    help = "Run a tracker over one split and write a results file per sequence"

    def add_arguments(self, parser):
        parser.add_argument('--tracker', required=True, choices=sorted(get_trackers()))
        parser.add_argument('--ckpt', default=None, help='Checkpoint for the prot3d tracker')
        parser.add_argument('--data', required=True, help='Dataset directory')
        parser.add_argument('--split', default=None, help='Split file, default <data>/split.json')
        parser.add_argument('--split-name', dest='split_name', default='test', choices=('train', 'test'))
        parser.add_argument('--out', required=True, help='Results directory')
        parser.add_argument('--scale', type=float, default=None, help='Search scale of the centroid baseline')
        parser.add_argument('--jobs', type=int, default=None, help='Worker processes, default SOT_JOBS')

    def handle(self, *args, **options):
        data_dir = resolve_path(options['data'])
        split_path = resolve_path(options['split']) or os.path.join(data_dir, 'split.json')
        out_dir = resolve_path(options['out'])
        ckpt = resolve_path(options['ckpt'])
        tracker_options = {}
        if ckpt:
            tracker_options['checkpoint'] = ckpt
        if options['scale'] is not None:
            tracker_options['scale'] = options['scale']
        with command_errors():
            tracker = make_tracker(options['tracker'], **tracker_options)
            sequences = load_sequences(data_dir, split_path, options['split_name'])
            results, timings = track(tracker, sequences, out_dir, jobs=options['jobs'])

        config_hashes = {'checkpoint': file_hash(ckpt)} if ckpt else {}
        RunManifest.record('track', out_dir, config_hashes=config_hashes, timings=timings,
                           output_paths=[os.path.join(out_dir, '%s.jsonl' % r.sequence_id) for r in results])
        self.stdout.write('Tracked %d sequences with %s into %s' % (len(results), tracker.name, out_dir))
