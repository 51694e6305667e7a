class NNCoreError(Exception):
    pass


class ShapeError(NNCoreError, ValueError):
    pass


class NonFiniteError(NNCoreError, FloatingPointError):
    pass


class InvalidArgument(NNCoreError, ValueError):
    pass


class CheckpointError(NNCoreError):
    pass
