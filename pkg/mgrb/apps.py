from django.apps import AppConfig


class MgrbConfig(AppConfig):
    name = "mgrb"
    verbose_name = "Incremental learning runs"
    default_auto_field = "django.db.models.BigAutoField"
