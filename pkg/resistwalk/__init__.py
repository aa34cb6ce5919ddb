"""Random walks, local times and effective resistance on weighted graphs."""

__version__ = "0.1.0"
