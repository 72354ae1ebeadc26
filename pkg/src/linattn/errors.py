"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class DataError(ValueError):
    """Input data is malformed (bad token ids, bad file rows, ...)."""


class ContractError(ValueError):
    """A runtime precondition was violated (non-scalar loss, non-positive
    kernel features, fully masked sequence, ...)."""


class GraphError(RuntimeError):
    """Misuse of the differentiation graph, e.g. a second backward pass
    through an already consumed graph."""
