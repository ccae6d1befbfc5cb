"""Aerial-manipulator greenhouse scouting: scan planning, flight simulation,
synthetic sensing, fruit counting and harvest scheduling."""

__version__ = "0.1.0"
