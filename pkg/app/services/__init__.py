"""
Services package initialization.

This file makes the directory a Python package. Each module holds the logic
of one stage of the sortation pipeline.
"""
