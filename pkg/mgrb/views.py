from rest_framework import status
from rest_framework.decorators import api_view
from rest_framework.request import Request
from rest_framework.response import Response

from .models import ExperimentRun, PhaseRecord
from .serializers import (
    ExperimentRunDetailSerializer,
    ExperimentRunSerializer,
    PhaseDetailSerializer,
)
from .utils import accuracy_deltas


@api_view(["GET"])
def list_runs(request: Request) -> Response:
    """
    List stored runs, newest first
    GET /api/runs?name=<name>
    """
    runs = ExperimentRun.objects.all()
    name = request.query_params.get("name")
    if name:
        runs = runs.filter(name=name)
    return Response(ExperimentRunSerializer(runs, many=True).data)


@api_view(["GET"])
def view_run(request: Request, run_id: int) -> Response:
    """
    One run with its config and per-phase metrics
    GET /api/runs/<run_id>
    """
    try:
        run = ExperimentRun.objects.prefetch_related("phases").get(run_id=run_id)
    except ExperimentRun.DoesNotExist:
        return Response({"error": "Run not found"}, status=status.HTTP_404_NOT_FOUND)
    return Response(ExperimentRunDetailSerializer(run).data)


@api_view(["GET"])
def view_phase(request: Request, run_id: int, phase: int) -> Response:
    """
    One phase including its confusion matrix
    GET /api/runs/<run_id>/phases/<phase>
    """
    try:
        record = PhaseRecord.objects.get(run__run_id=run_id, phase=phase)
    except PhaseRecord.DoesNotExist:
        return Response({"error": "Phase not found"}, status=status.HTTP_404_NOT_FOUND)
    return Response(PhaseDetailSerializer(record).data)


@api_view(["GET"])
def compare_runs(request: Request, first_id: int, second_id: int) -> Response:
    """
    Per-class accuracy of the second run minus the first
    GET /api/compare/<first_id>/<second_id>?phase=<k>
    """
    runs = {run.run_id: run for run in ExperimentRun.objects.filter(run_id__in=[first_id, second_id])}
    if first_id not in runs or second_id not in runs:
        return Response({"error": "Run not found"}, status=status.HTTP_404_NOT_FOUND)
    first, second = runs[first_id], runs[second_id]

    if (first.seed, first.n, first.m, first.class_names) != (
        second.seed, second.n, second.m, second.class_names
    ):
        return Response(
            {"error": "Runs use different class splits"},
            status=status.HTTP_400_BAD_REQUEST,
        )

    last_common = min(first.phases.count(), second.phases.count()) - 1
    raw_phase = request.query_params.get("phase")
    try:
        phase = last_common if raw_phase is None else int(raw_phase)
    except ValueError:
        return Response({"error": "phase must be an integer"}, status=status.HTTP_400_BAD_REQUEST)
    if not 0 <= phase <= last_common:
        return Response(
            {"error": f"phase must be between 0 and {last_common}"},
            status=status.HTTP_400_BAD_REQUEST,
        )

    a = first.phases.get(phase=phase).per_class_accuracy
    b = second.phases.get(phase=phase).per_class_accuracy
    deltas = accuracy_deltas(a, b)
    return Response(
        {
            "first": first.run_id,
            "second": second.run_id,
            "phase": phase,
            "classes": [
                {
                    "class_index": index,
                    "class_name": first.class_names[index] if index < len(first.class_names) else None,
                    "first": a[index],
                    "second": b[index],
                    "delta": delta,
                }
                for index, delta in enumerate(deltas)
            ],
        }
    )
