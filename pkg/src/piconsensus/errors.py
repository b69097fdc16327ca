"""Exception hierarchy shared by the library and the CLI."""


class ConsensusError(Exception):
    """Base class for every error raised by piconsensus."""


class GraphError(ConsensusError, ValueError):
    pass


class DomainError(ConsensusError, ValueError):
    """A cost was evaluated outside its open domain."""

    def __init__(self, message, index=None, point=None):
        super().__init__(message)
        self.index = index
        self.point = point


class ConvergenceError(ConsensusError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class AssumptionError(ConsensusError, ValueError):
    """A standing assumption of the control design does not hold."""


class ConfigError(ConsensusError, ValueError):
    pass


class DivergenceError(ConsensusError, RuntimeError):
    def __init__(self, message, time=None, agent=None):
        super().__init__(message)
        self.time = time
        self.agent = agent


class AnalysisError(ConsensusError, ValueError):
    pass
