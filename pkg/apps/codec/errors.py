from diffprune.errors import DiffPruneError


class CodecError(DiffPruneError):
    pass


class BadMagicError(CodecError):
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"bad magic: expected {expected!r}, found {found!r}")


class UnsupportedVersionError(CodecError):
    def __init__(self, version):
        self.version = version
        super().__init__(f"unsupported format version {version}")


class ChecksumError(CodecError):
    def __init__(self, stored, computed):
        self.stored = stored
        self.computed = computed
        super().__init__(f"checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")


class TruncatedFileError(CodecError):
    def __init__(self, needed, available):
        self.needed = needed
        self.available = available
        super().__init__(f"file truncated: needs at least {needed} bytes, has {available}")


class UnsortedPositionsError(CodecError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"positions not strictly increasing at entry {index}")


class UnsupportedDimensionError(CodecError):
    def __init__(self, dim):
        self.dim = dim
        super().__init__(f"dimension {dim} does not fit u32 positions")


class SegmentMismatchError(CodecError):
    def __init__(self, divergence):
        self.divergence = divergence
        super().__init__(f"diff does not match checkpoint layout: {divergence}")


class MalformedFileError(CodecError):
    pass
