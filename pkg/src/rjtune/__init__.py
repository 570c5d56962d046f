"""Reversible jump MCMC for product-form targets, with optimal tuning rules."""

__version__ = "0.1.0"
