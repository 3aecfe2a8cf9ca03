"""Exception hierarchy shared by the engine and the CLI."""


class CellForceError(Exception):
    """Base class for all engine errors."""


class MeshError(CellForceError):
    pass


class AlignmentError(MeshError):
    """Grid spacing does not divide the domain or subdomain extents."""


class LocateError(CellForceError):
    """A point lies outside the meshed domain (or inside a hole)."""


class AssemblyError(CellForceError):
    pass


class SolverError(CellForceError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularityError(CellForceError, ValueError):
    """Green's function evaluated at the source point."""


class IndeterminateRateError(CellForceError, ArithmeticError):
    pass


class SamplingError(CellForceError):
    pass


class ConfigError(CellForceError):
    pass
