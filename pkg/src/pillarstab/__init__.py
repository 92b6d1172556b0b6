"""Coal pillar stability classification toolkit.

Safety-factor labeling of pillar case histories, SMOTE class balancing,
from-scratch backpropagation networks with ReLU/ELU/GELU activations, a
majority-vote bagging ensemble, and a seeded experiment runner with
deterministic CSV/markdown/SVG reports.
"""

__version__ = "0.1.0"
