"""Simulated KUKA Sunrise controller and a Python client for its TCP API."""

__version__ = "0.1.0"
