"""Embedding exporter: turns videos, captions, and label prompts into the
binary store + manifest layout the alignment core consumes.

The store byte contract is implemented here independently; conformance
against the consumer is covered by the test suite.
"""

__version__ = "0.1.0"
