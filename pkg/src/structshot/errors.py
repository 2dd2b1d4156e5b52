"""Exception hierarchy shared by every structshot module."""


class StructshotError(Exception):
    """Base class for all domain errors; the CLI turns these into one-line diagnostics."""


class ShapeError(StructshotError, ValueError):
    """A primitive received inputs whose shapes violate its shape rule."""

    def __init__(self, op: str, shapes: list[tuple[int, ...]], detail: str = ""):
        self.op = op
        self.shapes = shapes
        rendered = ", ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NonFiniteError(StructshotError, ValueError):
    """A computation produced NaN or Inf from finite inputs."""


class BackwardError(StructshotError):
    """Reverse pass requested on an output it cannot differentiate."""


class DatasetError(StructshotError, ValueError):
    """Malformed or inconsistent dataset content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EpisodeError(StructshotError, ValueError):
    """An episode cannot be sampled from the given graphs."""


class AttentionConfigError(StructshotError, ValueError):
    """Illegal attention kind parameters or inputs."""


class FusionError(StructshotError, ValueError):
    """Structure fusion received inputs it cannot combine."""


class DegenerateEmbeddingError(StructshotError, ValueError):
    """A centered embedding has (near) zero norm and cannot be L2-normalized."""


class TrainingError(StructshotError):
    """Training aborted."""


class CheckpointError(StructshotError):
    """Checkpoint missing, unreadable, or written by an unknown format version."""


class ConfigError(StructshotError, ValueError):
    """Invalid run configuration."""
