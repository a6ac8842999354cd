"""Relative clinical timelines from PMOA case reports: corpus filtering,
LLM annotation, event matching and temporal agreement metrics."""

__version__ = "0.1.0"
