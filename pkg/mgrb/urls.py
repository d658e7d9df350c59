from django.urls import path

from . import views

urlpatterns = [
    path("runs", views.list_runs, name="runs"),
    path("runs/<int:run_id>", views.view_run, name="view-run"),
    path("runs/<int:run_id>/phases/<int:phase>", views.view_phase, name="view-phase"),
    path("compare/<int:first_id>/<int:second_id>", views.compare_runs, name="compare-runs"),
]
