"""Exception hierarchy shared by all modules.

Every error carries a stable string ``code`` and an ``exit_status`` used by
the command-line front end: 3 for invalid input, 2 for a computation that
ran but failed to certify.
"""


class QGError(Exception):
    code = "QGError"
    exit_status = 2

    def __init__(self, message="", **details):
        super().__init__(message or self.code)
        self.details = details


class InvalidInput(QGError):
    code = "InvalidInput"
    exit_status = 3


class ComputationFailed(QGError):
    code = "ComputationFailed"
    exit_status = 2


# graph-core
class GraphError(InvalidInput):
    code = "GraphError"

    def __init__(self, message="", violations=(), **details):
        super().__init__(message, **details)
        self.violations = list(violations)


class Disconnected(GraphError):
    code = "Disconnected"


class NonpositiveLength(GraphError):
    code = "NonpositiveLength"


class EmptyGraph(GraphError):
    code = "EmptyGraph"


class GraphFormatError(GraphError):
    code = "GraphFormatError"


# edge-kernel
class ResonantEdge(ComputationFailed):
    code = "ResonantEdge"


class NonDecaying(ComputationFailed):
    code = "NonDecaying"


# vertex-system
class NonSmoothAtZero(ComputationFailed):
    code = "NonSmoothAtZero"


class CriticalExponent(InvalidInput):
    code = "CriticalExponent"


class NoDefectAtSeed(InvalidInput):
    code = "NoDefectAtSeed"


class MaxIterExceeded(ComputationFailed):
    code = "MaxIterExceeded"


class SingularJacobian(ComputationFailed):
    code = "SingularJacobian"


class LeftDomain(ComputationFailed):
    code = "LeftDomain"


# continuation
class MinStepReached(ComputationFailed):
    code = "MinStepReached"

    def __init__(self, message="", branch=None, **details):
        super().__init__(message, **details)
        self.branch = branch


# functional-lab
class DegenerateField(InvalidInput):
    code = "DegenerateField"


class SupportOverflow(InvalidInput):
    code = "SupportOverflow"


class ConstructionFailed(ComputationFailed):
    code = "ConstructionFailed"


class Diverging(ComputationFailed):
    code = "Diverging"

    def __init__(self, message="", field=None, history=None, **details):
        super().__init__(message, **details)
        self.field = field
        self.history = history or []


class PreconditionError(InvalidInput):
    code = "PreconditionError"


class TooManyNodes(InvalidInput):
    code = "TooManyNodes"


# combinatorial-core
class NonzeroLambda(InvalidInput):
    code = "NonzeroLambda"


class ExponentOutOfRange(InvalidInput):
    code = "ExponentOutOfRange"
