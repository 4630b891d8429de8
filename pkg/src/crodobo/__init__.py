"""Online unsupervised domain adaptation by cross-domain bootstrapping."""

__version__ = "0.1.0"
