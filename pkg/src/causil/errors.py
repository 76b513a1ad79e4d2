"""Exception hierarchy shared by all causil modules."""


class CausilError(Exception):
    """Base class for every error raised by causil."""


class CycleDetected(CausilError):
    pass


class InconsistentPattern(CausilError):
    pass


class InvalidConfig(CausilError):
    pass


class CyclicTemplate(CausilError):
    pass


class InsufficientData(CausilError):
    pass


class DegenerateData(CausilError):
    pass


class MissingData(CausilError):
    pass


class NodeSetMismatch(CausilError):
    pass
