from diffprune.errors import DiffPruneError


class GateDomainError(DiffPruneError):
    pass
