"""Exception hierarchy shared by all polymine modules."""


class PolymineError(Exception):
    """Base class for data errors (CLI maps these to exit status 1)."""

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class BadMagic(PolymineError):
    pass


class DimMismatch(PolymineError):
    pass


class CountMismatch(PolymineError):
    pass


class NonFiniteValue(PolymineError):
    def __init__(self, rows):
        self.rows = list(rows)
        super().__init__(f"non-finite values in rows {self.rows[:20]}")


class ZeroNormRow(PolymineError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"row {index} has zero norm")


class DuplicateId(PolymineError):
    pass


class MissingEmbedding(PolymineError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"{len(self.ids)} records have no embedding row: {self.ids[:20]}")


class MissingMetadata(PolymineError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"{len(self.ids)} embedding rows have no metadata: {self.ids[:20]}")


class KExceedsTargets(PolymineError):
    pass


class TooFewRows(PolymineError):
    pass


class DegenerateDenominator(PolymineError):
    pass


class EmptyStore(PolymineError):
    pass


class MissingSpan(PolymineError):
    pass


class UnsortedInput(PolymineError):
    pass


class OverlappingVadUnits(PolymineError):
    pass


class MissingLidScore(PolymineError):
    pass


class MissingField(PolymineError):
    pass


class EmptyCorpus(PolymineError):
    pass


class EmptyInput(PolymineError):
    pass


class NonPositiveDenominator(PolymineError):
    pass


class ConstantSeries(PolymineError):
    pass


class NonFiniteLoss(PolymineError):
    pass


class ConfigError(PolymineError):
    pass
