"""Exception types shared across the package."""


class SpiralBrickError(Exception):
    """Base class for all package errors."""


class DegenerateInput(SpiralBrickError, ValueError):
    """Too few points, or points that span no area/volume."""


class DomainError(SpiralBrickError, ValueError):
    """A scalar argument lies outside the domain of a formula."""


class InvalidSpec(SpiralBrickError, ValueError):
    """A column specification violates one of its invariants."""


class ClosureError(SpiralBrickError):
    """A base loop does not return to its starting anchor."""


class GeometryError(SpiralBrickError):
    """A camera or scene arrangement that cannot be rendered."""


class EmptyResult(SpiralBrickError):
    """Filtering removed every point."""


class ShapeMismatch(SpiralBrickError):
    """The estimated footprint does not look like a brick."""


class UnreachableTarget(SpiralBrickError):
    """A placement target the gripper must not or cannot reach."""


class EmptyLog(SpiralBrickError, ValueError):
    """Metrics were requested for an assembly log with no records."""


class ParseError(SpiralBrickError, ValueError):
    """A configuration document could not be read."""


class ValidationError(SpiralBrickError, ValueError):
    """A configuration document was read but violates invariants.

    ``problems`` holds every violation as a path-qualified message.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
