class VrlError(Exception):
    pass


class DimensionError(VrlError, ValueError):
    pass


class ConfigError(VrlError, ValueError):
    pass


class OutOfRangeError(VrlError, IndexError):
    pass


class IndicatorMismatchError(VrlError, ValueError):
    def __init__(self, indicator, task):
        message = f"Indicator '{indicator}' cannot be used for the {task} task."
        super().__init__(message)


class NonFiniteError(VrlError, FloatingPointError):
    pass


class TrainingDivergedError(NonFiniteError):
    def __init__(self, iteration, window_ids):
        self.iteration = iteration
        self.window_ids = list(window_ids)
        message = f"Loss is not finite at iteration {iteration} (windows {self.window_ids})."
        super().__init__(message)


class MissingFramesError(VrlError, FileNotFoundError):
    pass
