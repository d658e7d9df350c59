from django.contrib import admin

from .models import ExperimentRun, PhaseRecord


class PhaseRecordInline(admin.TabularInline):
    model = PhaseRecord
    extra = 0
    fields = ["phase", "n_old", "n_new", "accuracy", "old_accuracy", "new_accuracy"]
    readonly_fields = fields
    can_delete = False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = [
        "run_id",
        "name",
        "seed",
        "n",
        "m",
        "last_accuracy",
        "average_incremental_accuracy",
        "created_at",
    ]
    list_filter = ["name", "seed", "created_at"]
    search_fields = ["name", "run_id", "output_dir"]
    readonly_fields = ["run_id", "created_at", "updated_at"]
    inlines = [PhaseRecordInline]
    fieldsets = (
        ("Run", {"fields": ("run_id", "name", "seed", "n", "m", "output_dir")}),
        ("Results", {"fields": ("last_accuracy", "average_incremental_accuracy")}),
        ("Config", {"fields": ("config", "class_names"), "classes": ("collapse",)}),
        (
            "Timestamps",
            {"fields": ("created_at", "updated_at"), "classes": ("collapse",)},
        ),
    )


@admin.register(PhaseRecord)
class PhaseRecordAdmin(admin.ModelAdmin):
    list_display = ["run", "phase", "n_old", "n_new", "accuracy", "old_accuracy", "new_accuracy"]
    list_filter = ["phase"]
    search_fields = ["run__name", "run__run_id"]
