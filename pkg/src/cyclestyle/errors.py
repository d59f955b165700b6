"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map it without a lookup
table: 2 for validation problems, 3 for divergence, 4 for I/O.
"""


class CycleStyleError(Exception):
    exit_code = 1
    kind = "error"

    def reason(self) -> str:
        """One-line machine-parsable reason, ``kind: message``."""
        msg = " ".join(str(self).split())
        return f"{self.kind}: {msg}"


class ValidationError(CycleStyleError, ValueError):
    exit_code = 2
    kind = "validation"


class CapacityError(ValidationError):
    kind = "capacity"


class CorrespondenceError(ValidationError):
    kind = "correspondence"


class RegionLookupError(ValidationError, KeyError):
    kind = "lookup"

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class IntegrityError(ValidationError):
    kind = "integrity"


class IncompatibleVersionError(ValidationError):
    kind = "version"


class SchemaError(ValidationError):
    kind = "schema"


class DivergenceError(CycleStyleError, ArithmeticError):
    exit_code = 3
    kind = "divergence"


class NumericError(DivergenceError):
    kind = "numeric"


class LoadError(CycleStyleError, OSError):
    exit_code = 4
    kind = "io"


class DegenerateRegionError(ValidationError):
    kind = "degenerate"
