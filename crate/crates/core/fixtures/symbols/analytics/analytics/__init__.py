"""Small analytics package."""
from .core import run_pca, Model
from .io.files import load_table as load

__all__ = ["run_pca", "Model", "load", "VERSION", "_internal"]

VERSION = "1.0"


def _internal():
    return None
