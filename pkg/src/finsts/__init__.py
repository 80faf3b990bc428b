"""finsts: financial narrative similarity toolkit.

Pairs year-over-year report sentences, builds LLM-augmented triplet data,
trains a projection head with a cosine triplet loss, evaluates with AUC,
and runs a double-blind annotation service.
"""

__version__ = "0.1.0"
