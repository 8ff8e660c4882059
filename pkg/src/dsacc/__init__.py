"""Constrained discrete soft actor-critic."""
