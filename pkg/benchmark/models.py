import hashlib
import json
import logging
import os

from django.conf import settings
from django.db import models
from django.utils.translation import gettext_lazy as _

# Per module logger
logger = logging.getLogger(__name__)

MANIFEST_FILE_NAME = 'run_manifest.json'


def file_hash(path):
    with open(path, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()


class RunManifest(models.Model):
    """
    Provenance of one command run: what produced the outputs and from which
    configuration, so a report can be traced back to its inputs.
    """
    command = models.CharField(verbose_name=_('Command'), max_length=32, db_index=True)
    tool_version = models.CharField(verbose_name=_('Tool version'), max_length=64)
    seed = models.BigIntegerField(verbose_name=_('Seed'), null=True, blank=True)
    config_hashes = models.JSONField(verbose_name=_('Config hashes'), default=dict, blank=True)
    recipe_hash = models.CharField(verbose_name=_('Dataset recipe hash'), max_length=64, blank=True)
    timings = models.JSONField(verbose_name=_('Per-sequence timing'), default=dict, blank=True,
                               help_text=_('Seconds spent per sequence id'))
    output_paths = models.JSONField(verbose_name=_('Output paths'), default=list, blank=True)
    created_time = models.DateTimeField(verbose_name=_('Created time'), auto_now_add=True)

    class Meta:
        verbose_name = _('Run manifest')
        verbose_name_plural = _('Run manifests')
        ordering = ('-created_time',)

    def __str__(self):
        return '%s @ %s' % (self.command, self.tool_version)

    def as_dict(self):
        return {
            'command': self.command,
            'tool_version': self.tool_version,
            'seed': self.seed,
            'config_hashes': self.config_hashes,
            'recipe_hash': self.recipe_hash,
            'timings': self.timings,
            'output_paths': self.output_paths,
        }

    def write(self, directory):
        """Write the manifest as run_manifest.json into `directory`."""
        path = os.path.join(directory, MANIFEST_FILE_NAME)
        with open(path, 'w', encoding='utf8') as f:
            f.write(json.dumps(self.as_dict(), indent=2, sort_keys=True) + '\n')
        return path

    @classmethod
    def record(cls, command, directory, **fields):
        """Store a manifest row and write it next to the outputs in `directory`."""
        manifest = cls.objects.create(command=command, tool_version=settings.SOT_TOOL_VERSION, **fields)
        os.makedirs(directory, exist_ok=True)
        path = manifest.write(directory)
        logger.info('recorded %s run manifest %d in %s' % (command, manifest.pk, path))
        return manifest
