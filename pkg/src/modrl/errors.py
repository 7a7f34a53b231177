"""Exception hierarchy shared by every layer of the framework."""


class ModrlError(Exception):
    pass


# spaces / tensors
class SpaceError(ModrlError):
    pass


class RankMismatchError(SpaceError):
    pass


class ShapeError(ModrlError):
    pass


class DTypeError(ModrlError):
    pass


class AxisError(ShapeError):
    pass


class GradientError(ModrlError):
    pass


# composition
class RegistrationError(ModrlError):
    pass


class ScopeError(ModrlError):
    pass


class BarrierViolationError(ModrlError):
    pass


class EncapsulationError(ModrlError):
    pass


# assembly / build
class AssemblyError(ModrlError):
    pass


class UnknownSpaceError(AssemblyError):
    pass


class BuildError(ModrlError):
    pass


class SpaceConflictError(BuildError):
    pass


class BuildStallError(BuildError):
    def __init__(self, message, component=None, missing=()):
        super().__init__(message)
        self.component = component
        self.missing = list(missing)


class CyclicDependencyError(BuildStallError):
    pass


class ReplicaError(BuildError):
    pass


# execution
class ExecutionError(ModrlError):
    def __init__(self, message, scope=None):
        super().__init__(f"[{scope}] {message}" if scope else message)
        self.scope = scope


class UnknownApiError(ExecutionError):
    pass


class VariableError(ModrlError):
    pass


# agents / io
class ConfigError(ModrlError):
    pass


class CheckpointError(ModrlError):
    pass


class EnvironmentStateError(ModrlError):
    pass
