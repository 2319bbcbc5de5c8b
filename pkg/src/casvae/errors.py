"""Exception hierarchy shared by the package."""


class CasvaeError(Exception):
    """Base class for all package errors."""


class DimensionError(CasvaeError, ValueError):
    pass


class ConfigError(CasvaeError, ValueError):
    pass


class BatchSizeError(CasvaeError, ValueError):
    pass


class DomainError(CasvaeError, ValueError):
    pass


class InsufficientDataError(CasvaeError, ValueError):
    pass


class UntrainedModelError(CasvaeError, RuntimeError):
    pass


class TrainingDivergedError(CasvaeError, RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class DisconnectedGraphError(CasvaeError, ValueError):
    def __init__(self, component_sizes):
        sizes = sorted(component_sizes, reverse=True)
        super().__init__(f"neighbor graph is disconnected; component sizes {sizes}")
        self.component_sizes = sizes


class DegenerateGeometryError(CasvaeError, ValueError):
    pass


class ContainerError(CasvaeError, ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass
