class CoboundError(Exception):
    pass


class DomainError(CoboundError, ValueError):
    pass


class ResourceError(CoboundError):
    def __init__(self, required, budget):
        super().__init__(
            f"exact model needs {required} atoms but the atom budget is {budget}"
        )
        self.required = required
        self.budget = budget


class ConfigError(CoboundError):
    pass


class ConvergenceError(CoboundError):
    def __init__(self, message, cap):
        super().__init__(f"{message} (cap {cap})")
        self.cap = cap


class AcceptanceError(CoboundError):
    def __init__(self, failures):
        names = ", ".join(name for (name, _detail) in failures)
        super().__init__(f"acceptance check failed: {names}")
        self.failures = failures
