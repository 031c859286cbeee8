"""sigmaric: numerical solvers for the sigma_k-Ricci problem on manifolds
with boundary, with complete-metric exhaustion and Poincare-Einstein
detection invariants."""

__version__ = "0.1.0"
