"""Model hub engine: label expert models on a semantic DAG, select and
ensemble their classification heads for zero-shot tasks."""

from . import chco, cli, errors, labelling, reuse, sdag, selection, store, synth

__version__ = "0.1.0"

__all__ = [
    "chco",
    "cli",
    "errors",
    "labelling",
    "reuse",
    "sdag",
    "selection",
    "store",
    "synth",
    "__version__",
]
