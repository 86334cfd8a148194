"""Exception hierarchy shared by all modules."""


class WFError(Exception):
    """Base class for every error raised by this package."""


class ModelError(WFError):
    """A model violates one of the structural assumptions."""


class NonPositiveMutation(ModelError):
    pass


class AsymmetricCoupling(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class DuplicateEdge(ModelError):
    pass


class InvalidModel(ModelError):
    """Catch-all for malformed input (bad indices, self-coupling, ...)."""


class ModelValidationError(ModelError):
    """Raised by ``validate_model``; carries every violation found."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{type(v).__name__}: {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {lines}")

    def has(self, kind):
        return any(isinstance(v, kind) for v in self.violations)

    @classmethod
    def of(cls, violations):
        """Instance that is also catchable as each violated kind."""
        kinds = []
        for v in violations:
            if type(v) not in kinds and not issubclass(cls, type(v)):
                kinds.append(type(v))
        if not kinds:
            return cls(violations)
        name = "ModelValidationError[" + ",".join(k.__name__ for k in kinds) + "]"
        return type(name, (cls, *kinds), {})(violations)


class CountSumMismatch(WFError):
    pass


class InvalidState(WFError):
    pass


class ModelTooLarge(WFError):
    pass


class PopulationTooSmall(WFError):
    pass


class SingularAtBoundary(WFError):
    pass


class NonFiniteState(WFError):
    pass


class NoConvergence(WFError):
    pass


class UnsupportedModelShape(WFError):
    pass


class NonIntegrableEvaluation(WFError):
    pass


class EmptyInput(WFError):
    pass


class DomainError(WFError, ValueError):
    """Argument outside the domain of a special function."""
