"""
Tests package initialization.

Unit and integration tests; shared input files live in ``fixtures/``.
"""
