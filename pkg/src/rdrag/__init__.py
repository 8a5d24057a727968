"""Retrieval-augmented construction-hazard identification pipeline.

The package wires together a hazard case library, an image/text embedding
gateway, exact top-K similarity retrieval, prompt assembly, a multimodal
LLM gateway with offline mocks, text metrics, and an experiment runner
that produces comparison reports.
"""

__version__ = "0.1.0"
