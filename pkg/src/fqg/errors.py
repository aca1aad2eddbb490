"""Exception types shared across the package."""


class FQGError(Exception):
    """Base class for toolkit errors."""


class InvalidParameter(FQGError, ValueError):
    pass


class ResourceCap(FQGError):
    """A size guard (cells, vertices, dofs) would be exceeded."""


class InsufficientData(FQGError):
    """Not enough trusted data for a fit or a resolvable time scale."""
