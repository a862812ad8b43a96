"""Enclosure-method toolkit: forward wave simulation and distance extraction."""
