from lab.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Monitor structural invariants, energy law and the Lyapunov functional along a trajectory"
    kind = "invariants"
