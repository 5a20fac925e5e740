"""Exception hierarchy shared by all ddl modules."""


class DDLError(Exception):
    """Base class for errors raised by ddl."""


class ShapeError(DDLError, ValueError):
    """Matrix operands do not conform."""


class StepSizeError(DDLError, ValueError):
    """A step size lies outside its admissible interval."""


class SingularGramError(DDLError, ArithmeticError):
    """Gram matrix is singular; retry with a positive ridge."""


class ConvergenceError(DDLError, ArithmeticError):
    """An iterative kernel hit its iteration cap before converging."""


class DivergenceError(DDLError, ArithmeticError):
    """A learning run blew up (objective or estimate norm ran away)."""
