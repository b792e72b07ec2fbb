"""Sequential Monte-Carlo training of energy-based models with Jarzynski
weight correction, CD/PCD baselines and analytic Gaussian-mixture oracles."""

__version__ = "0.1.0"
