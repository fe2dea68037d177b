"""Store-and-forward field telemetry: protocol library, link simulator, monitoring gateway."""

__version__ = "0.1.0"
