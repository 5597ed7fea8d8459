"""Annealed variational inference with simulated underdamped Langevin diffusions.

Builds augmented variational distributions from numerically simulated
underdamped Langevin dynamics and their time reversals, and trains them by
maximizing an augmented evidence lower bound with reparameterization
gradients. Implements the ULA, MCD, UHA and LDVI method family plus
Euler-Maruyama variants on a set of Bayesian benchmark posteriors.
"""

from ldvi.tape import Tape, Var, DomainError

__all__ = ["Tape", "Var", "DomainError"]
__version__ = "0.1.0"
