"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """A config value violates a documented precondition."""


class PlacementError(RuntimeError):
    """Character placement could not satisfy the overlap cap within the retry budget."""


class GenerationError(RuntimeError):
    """CAPTCHA generation failed (placement retries exhausted or sampler produced non-finite values)."""


class EvaluationError(ValueError):
    """An attack-evaluation input is unusable (e.g. no ground truth at all, missing image files)."""


class ProtocolError(RuntimeError):
    """A pluggable attacker failed inside a protocol runner."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
