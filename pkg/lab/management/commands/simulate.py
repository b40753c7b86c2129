from lab.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Run the nonlinear solver and write a trajectory directory"
    kind = "simulate"
