"""
Routes package initialization.

This file makes the directory a Python package for the JSON API blueprint.
"""
