"""Exception hierarchy shared by all modules."""


class QformerError(Exception):
    """Base class for every error raised by this package."""


class LayoutError(QformerError, ValueError):
    """Register names, widths or target lists are inconsistent."""


class CapacityError(QformerError, MemoryError):
    """A layout exceeds the configured qubit budget."""


class NonUnitaryError(QformerError, ValueError):
    """A matrix that must be unitary (or Hermitian) is not."""


class ShapeError(QformerError, ValueError):
    """Matrix shapes disagree with the model dimensions."""


class PostSelectionError(QformerError, ArithmeticError):
    """A post-selected branch has (numerically) zero probability."""


class ScaleError(QformerError, ArithmeticError):
    """A block-encoding scale does not bound the encoded entries."""
