"""Split conformal prediction over Bayesian and frequentist neural-network posteriors."""

__version__ = "0.1.0"
