"""Exception hierarchy.

Everything derives from :class:`DnsCovertError`. Subclasses of
:class:`DataError` signal bad input data (CLI exit code 2).
"""


class DnsCovertError(Exception):
    pass


class DataError(DnsCovertError):
    pass


class ParseError(DataError):
    def __init__(self, field, message, line_no=None):
        self.field = field
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{field}: {message}")


class InvalidHostname(DataError):
    def __init__(self, qname, reason):
        self.qname = qname
        super().__init__(f"invalid hostname {qname!r}: {reason}")


class EmptySubdomain(DataError):
    pass


class DegenerateData(DataError):
    pass


class NoConvergence(DnsCovertError):
    def __init__(self, max_iter, gap=None):
        self.max_iter = max_iter
        self.gap = gap
        msg = f"solver did not converge within {max_iter} iterations"
        if gap is not None:
            msg += f" (KKT gap {gap:.3g})"
        super().__init__(msg)


class CorruptModel(DataError):
    pass


class VersionMismatch(DataError):
    pass


class EmptyBaseline(DnsCovertError):
    pass


class InvalidCounts(DataError):
    pass


class InsufficientData(DataError):
    pass


class UnsupportedCodec(DnsCovertError):
    pass


class MissingGroundTruth(DataError):
    pass
