"""
URL configuration for the viscoelastic project.

The run browser is read-only: run lists, run details and artifact files as
JSON/CSV plot data, plus the admin.
"""
from django.contrib import admin
from django.urls import path

from lab import views

urlpatterns = [
    path("", views.run_list, name="run_list"),
    path("runs/<int:run_id>/", views.run_detail, name="run_detail"),
    path("runs/<int:run_id>/artifacts/<int:artifact_id>/", views.artifact_data, name="artifact_data"),
    path("admin/", admin.site.urls),
]
