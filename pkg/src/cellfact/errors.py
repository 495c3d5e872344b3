"""Exception hierarchy shared across the toolkit."""


class CellfactError(Exception):
    """Base class for all structured toolkit errors."""


class CsvParseError(CellfactError):
    def __init__(self, message: str, row_index: int | None = None):
        super().__init__(message)
        self.row_index = row_index


class UnsupportedTopologyError(CellfactError):
    pass


class PerturbationError(CellfactError):
    pass


class BudgetError(CellfactError):
    pass


class GoldError(CellfactError):
    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class GraphError(CellfactError):
    pass


class StatsError(CellfactError):
    pass


class ManifestError(CellfactError):
    pass
