from django.apps import AppConfig


class SubstrateConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "substrate"
    verbose_name = "Neural substrate"
