"""Exception types shared across the package."""


class BenchtopError(Exception):
    """Base class for all package errors."""


# -- scenes and geometry ------------------------------------------------------

class UnknownDomain(BenchtopError):
    pass


class InitialCollision(BenchtopError):
    """A freshly built scene has interpenetrating bodies: bad domain geometry."""


class UnknownName(BenchtopError):
    """A link or body name did not resolve against the world."""


class DegenerateBox(BenchtopError):
    pass


# -- grasping and placement ---------------------------------------------------

class NoContactAtGrasp(BenchtopError):
    """Gripper closed but the fingers are not touching the target."""


class NoValidGrasp(BenchtopError):
    pass


class NoValidPlacement(BenchtopError):
    pass


# -- motion -------------------------------------------------------------------

class IkUnreachable(BenchtopError):
    pass


class PlanTimeout(BenchtopError):
    pass


class InvalidGoal(BenchtopError):
    """Requested plan endpoint is in collision."""


class NotArticulated(BenchtopError):
    pass


class JointAtLimit(BenchtopError):
    pass


# -- predicates ---------------------------------------------------------------

class PredicateSyntaxError(BenchtopError):
    """Parse failure; carries position and the tokens that were expected."""

    def __init__(self, message, position, expected=()):
        super().__init__(f"{message} at position {position}"
                         + (f" (expected {', '.join(expected)})" if expected else ""))
        self.position = position
        self.expected = tuple(expected)


class UnknownBuiltin(BenchtopError):
    pass


class UnknownSceneName(BenchtopError):
    pass


# -- planner ------------------------------------------------------------------

class BackendError(BenchtopError):
    pass


class MalformedCompletion(BenchtopError):
    pass


class InferenceRejected(BenchtopError):
    """Success-condition completion did not parse into the predicate DSL."""


class DepthExceeded(BenchtopError):
    pass


# -- rollout and distillation -------------------------------------------------

class GroundingFailed(BenchtopError):
    """No sampler candidate could be grounded into a feasible primitive sequence."""


class EmptyBuffer(BenchtopError):
    pass


class NonFiniteLoss(BenchtopError):
    pass


class ConfigError(BenchtopError):
    """Bad CLI or config-file input; maps to exit code 2."""
