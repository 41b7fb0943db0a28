"""Structured decoding for non-autoregressive translation.

Toy-scale NART models with a beam-approximated CRF (static or dynamic
low-rank transitions), plus training, decoding and benchmark tooling.
"""

__version__ = "0.1.0"
