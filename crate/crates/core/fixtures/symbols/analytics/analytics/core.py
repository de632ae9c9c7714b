import math

THRESHOLD = 0.5


def run_pca(data, n):
    """Project data onto n components."""
    return [row[:n] for row in data]


def _helper(x):
    return x


class Model:
    """A fitted model."""

    def __init__(self, weights, bias=0.0):
        self.weights = weights
        self.bias = bias

    def predict(self, row):
        return sum(w * v for w, v in zip(self.weights, row)) + self.bias


class _Cache:
    pass


async def fetch_remote(url, *, timeout=10):
    return url


def norm(values):
    return math.sqrt(sum(v * v for v in values))
