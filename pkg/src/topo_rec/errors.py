"""Exception hierarchy shared by every stage of the pipeline."""


class TopoRecError(Exception):
    """Base class for all errors raised by topo_rec."""


class EmptyDataset(TopoRecError):
    pass


class IndexOutOfRange(TopoRecError, IndexError):
    pass


class EmptyInput(TopoRecError, ValueError):
    pass


class Log10OfZero(TopoRecError, ValueError):
    pass


class DegenerateSample(TopoRecError):
    pass


class SamplingExhausted(TopoRecError):
    pass


class SplitInfeasible(TopoRecError):
    pass


class MetricUndefined(TopoRecError):
    pass


class ShapeError(TopoRecError, ValueError):
    pass


class ConfigError(TopoRecError, ValueError):
    pass


class NumericsError(TopoRecError, ArithmeticError):
    pass


class TrainingDiverged(TopoRecError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class CollinearDesign(TopoRecError, ValueError):
    def __init__(self, columns, message=None):
        self.columns = list(columns)
        if message is None:
            message = "design matrix is rank deficient"
            if self.columns:
                message += "; collinear columns: " + ", ".join(self.columns)
        super().__init__(message)


class FitInfeasible(TopoRecError, ValueError):
    pass


class InsufficientSamples(TopoRecError, ValueError):
    pass


class ManifestError(TopoRecError):
    pass


class PipelineAborted(TopoRecError):
    pass
