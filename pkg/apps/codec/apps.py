from django.apps import AppConfig


class CodecConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.codec"
    verbose_name = "Codec"
