"""Aspect-aware knowledge-concept recommendation over heterogeneous MOOC graphs."""

__version__ = "0.1.0"

LEARNER = "learner"
KC = "kc"
