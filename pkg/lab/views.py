from pathlib import Path

from django.http import FileResponse, Http404, JsonResponse
from django.shortcuts import get_object_or_404
from django.views.decorators.http import require_GET

from .models import Artifact, Run, RunKind

CONTENT_TYPES = {".csv": "text/csv", ".json": "application/json"}


@require_GET
def run_list(request):
    """Recent runs, optionally filtered with ?kind=."""
    kind = request.GET.get("kind")
    if kind:
        if kind not in RunKind.values:
            return JsonResponse({"error": f"unknown kind '{kind}'"}, status=400)
        runs = Run.objects.of_kind(kind)[:50]
    else:
        runs = Run.objects.recent(50)
    return JsonResponse({"runs": [run.to_dict() for run in runs]})


@require_GET
def run_detail(request, run_id):
    run = get_object_or_404(Run, id=run_id)
    payload = run.to_dict()
    payload["config"] = run.config
    payload["artifacts"] = [
        {"id": artifact.id, "name": artifact.name, "kind": artifact.kind} for artifact in run.artifacts.all()
    ]
    return JsonResponse(payload)


@require_GET
def artifact_data(request, run_id, artifact_id):
    """Stream a CSV or JSON artifact as plot data. Snapshots are not served."""
    artifact = get_object_or_404(Artifact, id=artifact_id, run_id=run_id)
    if not artifact.is_plot_data:
        raise Http404("Only CSV and JSON artifacts are served")
    path = Path(artifact.path).resolve()
    root = Path(artifact.run.output_dir).resolve()
    if root not in path.parents or not path.exists():
        raise Http404("Artifact file is missing")
    return FileResponse(open(path, "rb"), content_type=CONTENT_TYPES.get(path.suffix, "application/octet-stream"))
