"""Transfer of experience between optimisation and control tasks via Bayesian source weighting."""

__version__ = "0.1.0"
