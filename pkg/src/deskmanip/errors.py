"""Exception hierarchy shared across the package.

Every error raised on purpose by this library derives from DeskmanipError,
so callers (and the response-parsing fuzz tests) can catch one base class.
"""


class DeskmanipError(Exception):
    """Base class for all library errors."""


# --- geometry ---

class GeometryError(DeskmanipError):
    pass


class DegenerateCloud(GeometryError):
    """Point cloud has fewer than 4 points or covariance rank < 2."""


class NonOrthonormalFrame(GeometryError):
    """Axis pair violates unit-norm/orthogonality beyond tolerance."""


class ParallelAxes(GeometryError):
    """Two axes are (nearly) parallel; no orthonormal frame exists."""


class ZeroAxis(GeometryError):
    """Axis vector has (nearly) zero length."""


class DegenerateCamera(GeometryError):
    """Camera position coincides with its look-at point."""


# --- simulator ---

class SimError(DeskmanipError):
    pass


class OutOfWorkspace(SimError):
    """Goal position outside the workspace bounds."""


class InvalidGoalAxes(SimError):
    """Goal axes could not be interpreted as an orthonormal gripper frame."""


# --- protocol / parsing ---

class ProtocolError(DeskmanipError):
    pass


class TemplateSlotMissing(ProtocolError):
    pass


class NoActionLine(ProtocolError):
    """No line starting with 'ACTION:' found in the response."""


class WrongArity(ProtocolError):
    def __init__(self, n: int, expected: int = 10):
        super().__init__(f"ACTION vector has {n} elements, expected {expected}")
        self.n = n
        self.expected = expected


class NonNumericToken(ProtocolError):
    pass


class AmbiguousGripperFlag(ProtocolError):
    """Gripper open/close value not within 0.25 of either 0 or 1."""


# --- policy gateway ---

class PolicyError(DeskmanipError):
    pass


class TransportError(PolicyError):
    pass


class PolicyTimeout(TransportError):
    pass


class RemoteRefusal(PolicyError):
    """Endpoint kept returning a non-2xx status after all retries."""

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"remote endpoint refused with status {status}")
        self.status = status
        self.body = body


class EmptyCompletion(PolicyError):
    pass


class OracleStuck(PolicyError):
    """Scripted expert cannot make progress from the current world state."""


# --- orchestration / data ---

class NotSuccessful(DeskmanipError):
    """Role reversion requires a successful episode."""


class MisalignedLogProbs(DeskmanipError):
    """Token log-probability record does not line up with the rollout group."""


class SchemaViolation(DeskmanipError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
