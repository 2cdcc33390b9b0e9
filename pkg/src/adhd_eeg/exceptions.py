"""Exception hierarchy shared by every stage of the pipeline.

Each family carries the process exit code the CLI maps it to.
"""


class PipelineError(Exception):
    exit_code = 1
    stage = None

    def __init__(self, message="", stage=None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class ConfigError(PipelineError, ValueError):
    exit_code = 2


class DataError(PipelineError, ValueError):
    exit_code = 3


class NumericalError(PipelineError, ArithmeticError):
    exit_code = 4


class ShapeMismatch(DataError):
    pass


class EmptyTable(DataError):
    pass


class SingleClass(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, message="", epoch=None, batch=None, stage=None):
        super().__init__(message, stage=stage)
        self.epoch = epoch
        self.batch = batch
