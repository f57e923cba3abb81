"""Exception hierarchy shared by the solver, fixed-point driver and CLI."""


class AlloyFreezeError(Exception):
    pass


class ConfigError(AlloyFreezeError, ValueError):
    pass


class NumericalError(AlloyFreezeError):
    pass


class CflExceeded(NumericalError):
    pass


class EllipticDiverged(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class NotConverged(AlloyFreezeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class EmptySolidRegion(AlloyFreezeError):
    pass
