from django.apps import AppConfig


class PrismBaseConfig(AppConfig):
    name = 'prism_base'
    verbose_name = 'PRISM posterior refinement for dynamic text-attributed graphs'
