"""Blinded reader-study service: case assembly, sessions, and reporting."""
