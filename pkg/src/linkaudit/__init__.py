"""Latent-space linkage risk auditing for protected tabular releases.

The pipeline blocks records on generalized quasi-identifiers, encodes them in a
shared feature space, projects with PCA and asks, for every original record,
whether some co-blocked protected record reaches a similarity threshold.
"""

__version__ = "0.1.0"
