class SchemaError(ValueError):
    """Descriptor or relation file does not match the declared entity schema."""


class ReferentialError(ValueError):
    """A row references an id outside its entity type's id space."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its precondition."""
