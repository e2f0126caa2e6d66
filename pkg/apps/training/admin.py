from django.contrib import admin

from .models import EpochMetric, TrainingRun


class EpochMetricInline(admin.TabularInline):
    model = EpochMetric
    extra = 0
    fields = ("phase", "epoch", "train_loss", "val_accuracy", "expected_l0", "wall_seconds")
    readonly_fields = fields
    ordering = ("id",)


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = (
        "kind",
        "task",
        "method",
        "seed",
        "status",
        "epoch_count",
        "created_at",
        "completed_at",
    )
    list_filter = ("kind", "status", "method")
    search_fields = ("task", "method", "artifact_path")
    ordering = ("-created_at",)
    date_hierarchy = "created_at"
    inlines = [EpochMetricInline]

    fieldsets = (
        (None, {"fields": ("kind", "task", "method", "seed", "status")}),
        ("Result", {"fields": ("artifact_path", "error_message", "completed_at")}),
        ("Config", {"fields": ("config",)}),
    )

    readonly_fields = ("completed_at",)

    @admin.display(description="Epochs")
    def epoch_count(self, obj):
        return obj.epochs.count()


@admin.register(EpochMetric)
class EpochMetricAdmin(admin.ModelAdmin):
    list_display = ("run", "phase", "epoch", "train_loss", "val_accuracy", "expected_l0", "wall_seconds")
    list_filter = ("phase",)
    ordering = ("-run", "id")
    raw_id_fields = ("run",)
