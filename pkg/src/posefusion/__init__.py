"""Ground-plane pose lifting, multi-person tracking and proximity/pose fusion."""

__version__ = "0.1.0"
