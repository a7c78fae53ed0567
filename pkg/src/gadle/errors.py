"""Exception hierarchy.

Every error carries a ``category`` (its class name by default) so the
command line can print a single machine-parsable failure line.
"""


class GadleError(Exception):
    @property
    def category(self) -> str:
        return type(self).__name__


# ingest
class MalformedHeader(GadleError, ValueError):
    pass


class MalformedRow(GadleError, ValueError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"line {line}: {reason}" if reason else f"line {line}")


class NonMonotonicDates(GadleError, ValueError):
    pass


class EmptySeries(GadleError, ValueError):
    pass


class InvalidRange(GadleError, ValueError):
    pass


# episodes
class SeriesTooShort(GadleError, ValueError):
    pass


class CountExceedsMaximum(GadleError, ValueError):
    pass


class DegenerateContext(GadleError, ValueError):
    pass


# gasolver
class InstanceTooLarge(GadleError, ValueError):
    pass


# neural
class MissingEpisode(GadleError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class WidthMismatch(GadleError, ValueError):
    pass


class NonFiniteLoss(GadleError, FloatingPointError):
    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}" + (f": {detail}" if detail else ""))


# rl
class StepAfterTerminal(GadleError, RuntimeError):
    pass


class EmptyBuffer(GadleError, ValueError):
    pass


# evaluate
class RangeTooShort(GadleError, ValueError):
    pass


# daily run / config
class StaleState(GadleError, ValueError):
    pass


class MissingModel(GadleError, FileNotFoundError):
    pass


class ConfigError(GadleError, ValueError):
    pass
