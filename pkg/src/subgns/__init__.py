"""Subspace graph network simulator for rigid-body-driven granular flows.

Particle trajectories are reduced with PCA, a complete-graph interaction
network learns the reduced dynamics and the interaction force on the rigid
body, and predictions are mapped back to particle positions.
"""

__version__ = "0.1.0"
