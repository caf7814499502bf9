"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented codes (2 config, 3 data, 4 infeasible/degenerate).
"""


class PrivFairError(Exception):
    exit_code = 1


class ConfigError(PrivFairError):
    exit_code = 2


class DataError(PrivFairError):
    exit_code = 3


class DegenerateError(PrivFairError):
    exit_code = 4


class ZeroMassCell(DegenerateError):
    """A conditioning event has probability zero in a population."""


class EmptyCell(DegenerateError):
    """An empirical (y, group) cell contains no records."""

    def __init__(self, y, group, what="cell"):
        self.y = y
        self.group = group
        super().__init__(f"empty {what} (y={y}, group={group})")


class DegenerateChannel(DegenerateError):
    """The randomized-response channel is not invertible (epsilon = 0)."""


class GroupOutOfRange(DataError):
    pass


class PredictorUsesZ(PrivFairError):
    """Refusal to certify a predictor that reads the privatized attribute."""

    exit_code = 2


class NotBinaryGroups(ConfigError):
    pass


class Infeasible(DegenerateError):
    pass


class Unbounded(DegenerateError):
    pass


class OptimizerDiverged(DegenerateError):
    pass


class ZeroDenominator(DegenerateError):
    def __init__(self, y, group):
        self.y = y
        self.group = group
        super().__init__(f"proxy weight mass is zero for (y={y}, group={group})")


class MissingColumn(DataError):
    pass


class UnparseableRow(DataError):
    def __init__(self, index, reason=""):
        self.index = index
        msg = f"row {index} could not be parsed"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class EmptyDataset(DataError):
    pass
