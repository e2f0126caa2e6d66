from django.apps import AppConfig


class DiffsConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.diffs"
    verbose_name = "Diff vectors"
