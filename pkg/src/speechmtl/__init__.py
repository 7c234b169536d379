"""Modular multi-task speech processing.

Five tasks (recognition, enhancement, speaker classification, synthesis,
voice conversion) built from a shared set of encoder/decoder modules,
trainable jointly with uncertainty loss balancing and gradient surgery.
"""

__version__ = "0.1.0"
