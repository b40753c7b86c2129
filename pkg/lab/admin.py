from django.contrib import admin

from .models import Artifact, Run


class ArtifactInline(admin.TabularInline):
    model = Artifact
    extra = 0
    readonly_fields = ["name", "kind", "path"]
    can_delete = False


@admin.register(Run)
class RunAdmin(admin.ModelAdmin):
    list_display = ["kind", "status", "config_hash_short", "seed", "exit_code", "created_at", "finished_at"]
    list_filter = ["kind", "status", "created_at"]
    search_fields = ["config_hash", "output_dir"]
    date_hierarchy = "created_at"
    readonly_fields = ["created_at", "finished_at", "code_version"]
    inlines = [ArtifactInline]

    @admin.display(description="Config hash")
    def config_hash_short(self, obj):
        return obj.config_hash[:12]


@admin.register(Artifact)
class ArtifactAdmin(admin.ModelAdmin):
    list_display = ["name", "kind", "run"]
    list_filter = ["kind"]
    search_fields = ["name", "path"]
    list_select_related = ["run"]
