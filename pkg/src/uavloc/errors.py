"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class OutOfBounds(ValueError):
    """A flight path leaves the simulated map."""

    def __init__(self, message, waypoint_index=None):
        super().__init__(message)
        self.waypoint_index = waypoint_index


class EstimationFailed(RuntimeError):
    pass


class AlignmentFailed(RuntimeError):
    pass


class AssociationFailed(RuntimeError):
    pass


class TrackingLost(RuntimeError):
    pass


class PipelineFailure(RuntimeError):
    pass


class NotFound(KeyError):
    pass
