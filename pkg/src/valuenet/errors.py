"""Exception types raised across the package."""


class ValueNetError(Exception):
    """Base class for all errors raised by valuenet."""


class InvalidIri(ValueNetError, ValueError):
    pass


class InvalidUrl(InvalidIri):
    pass


class MismatchedSubject(ValueNetError, ValueError):
    """A service result does not describe the artifact it is attached to."""


class MissingResult(ValueNetError, ValueError):
    pass


class BadThreadRoot(ValueNetError, ValueError):
    """Accept/Reject sent in reply to something other than an Offer."""


class InvalidNotification(ValueNetError, ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.errors) or "invalid notification")


class ParseError(ValueNetError, ValueError):
    pass


class ProfileError(ValueNetError, ValueError):
    """Well-formed RDF that does not describe exactly one profiled activity."""


class IllegalTransition(ValueNetError):
    pass


class UnknownParent(ValueNetError):
    pass


class TerminalThread(ValueNetError):
    pass


class MissingUrl(ValueNetError, ValueError):
    pass


class SchemaError(ValueNetError, ValueError):
    def __init__(self, index, message):
        self.index = index
        super().__init__(f"record {index}: {message}")


class HarnessSetupError(ValueNetError, RuntimeError):
    pass
