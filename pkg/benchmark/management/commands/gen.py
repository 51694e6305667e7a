import dataclasses
import os

from django.core.management.base import BaseCommand

from benchmark import dataio, synthgen
from benchmark.harness import command_errors, resolve_path
from benchmark.models import RunManifest
from prot3d.config import config_hash


class Command(BaseCommand):
    help = "Generate a synthetic dataset from a recipe, together with its split file"

    def add_arguments(self, parser):
        parser.add_argument('--recipe', default='easy',
                            help='Recipe JSON file, or the name of a recipe shipped with the app')
        parser.add_argument('--out', required=True, help='Dataset directory')
        parser.add_argument('--seed', type=int, default=None, help='Override the recipe seed')
        parser.add_argument('--jobs', type=int, default=1, help='Worker processes')

    def handle(self, *args, **options):
        out_dir = resolve_path(options['out'])
        with command_errors():
            recipe = synthgen.load_recipe(options['recipe'])
            if options['seed'] is not None:
                recipe = dataclasses.replace(recipe, seed=options['seed'])
            ids = synthgen.generate_dataset(recipe, out_dir, jobs=options['jobs'])
            categories = {cfg.sequence_id: cfg.category for cfg in recipe.expand()}
            manifest = dataio.make_split(ids, recipe.train_fraction, recipe.seed, categories=categories)
            split_path = os.path.join(out_dir, 'split.json')
            dataio.write_split(manifest, split_path)

        RunManifest.record('gen', out_dir, seed=recipe.seed, recipe_hash=config_hash(recipe.to_dict()),
                           output_paths=[os.path.join(out_dir, i) for i in ids] + [split_path])
        self.stdout.write('Generated %d sequences in %s (%d train / %d test)'
                          % (len(ids), out_dir, len(manifest.train), len(manifest.test)))
