from ..core import norm

__all__ = ["norm", "scale"]


def scale(values, factor):
    return [v * factor for v in values]


def shift(values, offset):
    return [v + offset for v in values]
