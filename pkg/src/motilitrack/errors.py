"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MotilitrackError(Exception):
    exit_code = 3


class ConfigError(MotilitrackError):
    exit_code = 2


class ParamError(ConfigError):
    pass


class IngestError(MotilitrackError):
    pass


class LinkError(MotilitrackError):
    pass


class EmptySample(MotilitrackError):
    pass


class BuildError(MotilitrackError):
    pass


class EncodeError(MotilitrackError):
    pass


class PredictError(MotilitrackError):
    pass


class MetricError(MotilitrackError):
    pass


class EvalError(MotilitrackError):
    pass


class SpecError(ConfigError):
    pass


class TrainError(MotilitrackError):
    exit_code = 4


class StageError(MotilitrackError):
    """Wraps a failure inside a pipeline stage with the stage name and input."""

    def __init__(self, stage, context, cause):
        self.stage = stage
        self.context = context
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"[{stage}] {context}: {cause}")
