class BVLaplaceException(Exception):
    pass


class DomainException(BVLaplaceException, ValueError):
    pass


class InvalidConfigException(BVLaplaceException):
    '''Raised for malformed or inadmissible run configurations.'''

    def __init__(self, message, field=None, line=None, column=None):
        self.field = field
        self.line = line
        self.column = column
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}, column {column}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class NumericalFailureException(BVLaplaceException):
    '''Raised when a quadrature does not converge or an integral diverges.'''

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class DegeneratePointException(NumericalFailureException):
    '''Raised when the kNN radius vanishes at an evaluation point.'''

    def __init__(self, message, point_index=None, diagnostics=None):
        self.point_index = point_index
        super().__init__(message, diagnostics)
