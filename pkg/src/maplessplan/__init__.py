"""Sample-based motion planning on online BEV maps and occupancy flow."""

__version__ = "0.1.0"
