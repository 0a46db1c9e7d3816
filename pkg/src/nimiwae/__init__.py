"""Importance-weighted autoencoders for imputing missing features,
including non-ignorable (MNAR) missingness via a jointly learned mask model."""

__version__ = "0.1.0"
