"""Exception types raised across the package.

Each error subclasses the builtin that callers would already catch
(``ValueError``, ``RuntimeError``, ``IndexError``).
"""
import typing as T


class HyMemError(Exception):
    """Mixin base for every hymem error."""


class ShapeError(HyMemError, ValueError):
    pass


class ConfigError(HyMemError, ValueError):
    pass


class DataError(HyMemError, ValueError):
    pass


class DomainError(HyMemError, ValueError):
    pass


class RangeError(HyMemError, IndexError):
    pass


class StateError(HyMemError, RuntimeError):
    pass


class ParseError(HyMemError, ValueError):
    def __init__(self, msg: str, line: T.Optional[int] = None):
        if line is not None:
            msg = f'line {line}: {msg}'
        super().__init__(msg)
        self.line = line


class NumericError(HyMemError, RuntimeError):
    def __init__(self, msg: str, layer: T.Optional[int] = None):
        if layer is not None:
            msg = f'layer {layer}: {msg}'
        super().__init__(msg)
        self.layer = layer
