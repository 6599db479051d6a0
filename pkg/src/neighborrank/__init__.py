"""Slate reranking lab.

A small numpy-based library for list-wise reranking experiments: a
differentiable list evaluator, a sampling-based iterative list editor, a
counterfactual neighbor-list training procedure, ranking metrics and an
exhaustive permutation oracle, plus a synthetic session-log simulator used
in place of production logs.
"""

from . import autodiff, checkpoint, config, datagen, evaluator, generator, metrics, optim, pipeline, rng, trainer
from .autodiff import Tensor, grad_check, no_grad
from .rng import RngStream

__all__ = [
    "autodiff",
    "checkpoint",
    "config",
    "datagen",
    "evaluator",
    "generator",
    "metrics",
    "optim",
    "pipeline",
    "rng",
    "trainer",
    "Tensor",
    "grad_check",
    "no_grad",
    "RngStream",
]
