"""Exception hierarchy.

Every error carries a short ``category`` used by the command line to print
``error: <category>: <detail>``.
"""


class SRNNError(Exception):
    category = "internal"


class GraphError(SRNNError, ValueError):
    category = "graph"


class ArchSpecError(SRNNError, ValueError):
    category = "arch"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CompileError(SRNNError, ValueError):
    category = "compile"


class ShapeError(SRNNError, ValueError):
    category = "shape"


class InputError(SRNNError, ValueError):
    category = "input"


class DataError(SRNNError, ValueError):
    category = "data"


class CheckpointError(SRNNError, ValueError):
    category = "checkpoint"


class SwapError(SRNNError, ValueError):
    category = "swap"
