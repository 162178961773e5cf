"""Queueing models of signalized networks under platoon capacity gains."""

__version__ = "0.1.0"
