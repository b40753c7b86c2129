from lab.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Decay series, slope fits and lower bound certificate of the linearized flow"
    kind = "linear_decay"
