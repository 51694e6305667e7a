from django.apps import AppConfig


class BenchmarkConfig(AppConfig):
    name = 'benchmark'
    verbose_name = '3D single object tracking benchmark'
