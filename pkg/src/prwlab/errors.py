class PrwlabError(Exception):
    """Base class for errors raised by prwlab."""


class DomainError(PrwlabError, ValueError):
    pass


class GridMismatchError(PrwlabError, ValueError):
    pass


class UnsupportedFamilyError(PrwlabError, NotImplementedError):
    pass


class MissingMomentError(PrwlabError, ValueError):
    pass


class NonConvergedError(PrwlabError, RuntimeError):
    def __init__(self, msg, diagnostic=None):
        super().__init__(msg)
        self.diagnostic = diagnostic


class BracketError(PrwlabError, RuntimeError):
    pass


class ConfigError(PrwlabError, ValueError):
    def __init__(self, msg, key=None, line=None):
        super().__init__(msg)
        self.key = key
        self.line = line


class TailMassWarning(UserWarning):
    """Probability mass beyond the grid end exceeds the reporting threshold."""


class UnimodalityWarning(UserWarning):
    """The inner objective of mu(z) failed a three-point convexity probe."""
