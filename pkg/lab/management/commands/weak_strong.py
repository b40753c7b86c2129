from lab.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Relative energy certificate between a strong run and a second trajectory"
    kind = "weak_strong"
