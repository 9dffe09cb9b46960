"""Error categories shared by the library and reported by the CLI."""


class CpinnError(Exception):
    category = "error"


class ConfigurationError(CpinnError, ValueError):
    category = "configuration"


class ShapeError(CpinnError, ValueError):
    category = "shape"


class NumericError(CpinnError, ArithmeticError):
    category = "numeric"


class ParseError(CpinnError, ValueError):
    category = "parse"
