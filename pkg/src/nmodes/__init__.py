"""Nonlinear normal modes of planar soft-arm models and task-space similarity metrics."""
