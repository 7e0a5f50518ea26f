"""Dirichlet prior networks with explicit precision regularization.

Desk-scale toolkit: exact Dirichlet uncertainty measures, the precision-regularized
and reverse-KL training objectives, a numpy MLP with manual backprop, the
three-Gaussian synthetic benchmark, and OOD / misclassification detection metrics.
"""

__version__ = "0.1.0"
