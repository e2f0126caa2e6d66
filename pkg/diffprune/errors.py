class DiffPruneError(Exception):
    """Root of every error raised by the diffprune apps."""
