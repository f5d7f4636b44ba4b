"""povmsim: SDP certification of projective (non-)simulability of POVMs."""

__version__ = "0.1.0"
