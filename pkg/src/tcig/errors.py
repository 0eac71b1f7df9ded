"""Exception types shared across the package."""
from __future__ import annotations


class MaskNotHardError(ValueError):
    """Raised when an operation requires a hard (one-hot) mask."""


class ShapeMismatchError(ValueError):
    """Raised when two masks or images disagree in shape or class count."""


class OrphanClassError(ValueError):
    """Raised when a target mask contains a class no registered guide supports."""

    def __init__(self, class_ids, message=None):
        self.class_ids = tuple(sorted(class_ids))
        super().__init__(
            message
            or f"no registered guide supports target class(es) {list(self.class_ids)}"
        )


class PromptError(ValueError):
    """Raised when a prompt uses tokens outside the class vocabulary."""


class OptimizationError(RuntimeError):
    """Raised when the latent optimization produces NaN/Inf losses or gradients."""

    def __init__(self, step, components, message=None):
        self.step = step
        self.components = components
        super().__init__(
            message or f"non-finite value at step {step}: {components}"
        )


class RefinerError(RuntimeError):
    """Raised when the stage-2 refiner fails; wraps the refiner's diagnostic."""


class JobStateError(RuntimeError):
    """Raised on an operation not permitted in the job's current status."""


class JobSpecError(ValueError):
    """Raised when a job spec document fails validation.

    ``violations`` lists every offending field, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{field}: {msg}" for field, msg in self.violations)
        super().__init__(f"invalid job spec: {lines}")


class ManifestError(ValueError):
    """Raised on a malformed evaluation manifest; carries the line number."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"manifest line {line_no}: {message}")
