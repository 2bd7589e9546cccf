"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures to
its stable contract: 2 for bad input, 3 for runtime failures.
"""


class GridSimError(Exception):
    exit_code = 3


class InputError(GridSimError, ValueError):
    exit_code = 2


# topology
class ParseError(InputError):
    pass


class SchemaError(InputError):
    pass


class EmptyCase(InputError):
    pass


class NoUtilities(InputError):
    pass


class UnresolvedUtility(InputError):
    pass


class NoTransmissionInRegion(InputError):
    pass


class MissingUtilityInReport(InputError):
    pass


class UnknownNode(InputError):
    pass


class InvalidTopology(InputError):
    pass


# simulation
class InvalidParams(InputError):
    pass


class BadDistribution(InputError):
    pass


# metrics
class TooSmall(InputError):
    pass


class NoEdges(InputError):
    pass


class EmptySet(InputError):
    pass


# ranking
class InvalidWeights(InputError):
    pass


class MissingUtility(InputError):
    pass


class TooFewUtilities(InputError):
    pass


class NotAUtility(InputError):
    pass


class NoConvergence(GridSimError):
    pass


# bridge
class BridgeError(GridSimError):
    pass


class Truncated(BridgeError):
    pass


class Malformed(BridgeError):
    pass


class BindFailure(BridgeError):
    pass


class ConnectionLost(BridgeError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class BridgeTimeout(BridgeError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats
