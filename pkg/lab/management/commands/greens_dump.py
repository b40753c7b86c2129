from lab.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Tabulate the per-mode propagator and check it against the matrix exponential"
    kind = "greens_dump"
