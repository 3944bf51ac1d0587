"""
API package initialization.

This package holds the outward-facing pieces of the line: the PLC wire
protocol, the PLC emulator and the shared error handling.
"""
