from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RunManifest',
            fields=[
                ('id', models.AutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(db_index=True, max_length=32, verbose_name='Command')),
                ('tool_version', models.CharField(max_length=64, verbose_name='Tool version')),
                ('seed', models.BigIntegerField(blank=True, null=True, verbose_name='Seed')),
                ('config_hashes', models.JSONField(blank=True, default=dict, verbose_name='Config hashes')),
                ('recipe_hash', models.CharField(blank=True, max_length=64, verbose_name='Dataset recipe hash')),
                ('timings', models.JSONField(blank=True, default=dict, help_text='Seconds spent per sequence id',
                                             verbose_name='Per-sequence timing')),
                ('output_paths', models.JSONField(blank=True, default=list, verbose_name='Output paths')),
                ('created_time', models.DateTimeField(auto_now_add=True, verbose_name='Created time')),
            ],
            options={
                'verbose_name': 'Run manifest',
                'verbose_name_plural': 'Run manifests',
                'ordering': ('-created_time',),
            },
        ),
    ]
