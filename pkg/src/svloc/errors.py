"""Exception hierarchy shared by all modules."""


class SvlocError(Exception):
    """Base class for all library errors."""


class DegeneratePoint(SvlocError):
    """A point coincides with the camera center."""


class BadFov(SvlocError, ValueError):
    """Field of view outside (0, pi)."""


class DimensionMismatch(SvlocError, ValueError):
    pass


class DegenerateConfiguration(SvlocError):
    """Point configuration does not determine a homography."""


class NoConsensus(SvlocError):
    """RANSAC found too few inliers."""


class MissingVariable(SvlocError, KeyError):
    """A factor references an unknown variable."""


class UnderConstrained(MissingVariable):
    """A free variable is touched by no factor."""


class SingularSystem(SvlocError):
    """Damped normal equations could not be solved."""


class NonFiniteResidual(SvlocError, FloatingPointError):
    pass


class EmptyProblem(SvlocError):
    """No accepted tracks to build an estimation problem from."""


class TooFewDescriptors(SvlocError, ValueError):
    pass


class EmptyIndex(SvlocError):
    pass


class NoCorrespondences(SvlocError):
    pass


class NoAcceptedPanoramas(SvlocError):
    pass


class OutOfTangentRange(SvlocError, ValueError):
    """Point too far from the reference for the tangent-plane model."""


class InfeasibleSpec(SvlocError, ValueError):
    pass


class DegenerateGeometry(SvlocError):
    """Oracle input does not determine a unique optimum."""


class MissingGroundTruth(SvlocError, FileNotFoundError):
    pass


class ConfigError(SvlocError, ValueError):
    pass
