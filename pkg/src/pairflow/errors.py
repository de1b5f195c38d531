"""Exception types shared across the pipeline."""


class PairflowError(Exception):
    """Base class for data-level errors (CLI exit code 2)."""


class MalformedCapture(PairflowError):
    """Capture file header is truncated or not a known container format."""


class EmptyFlow(PairflowError):
    """Encapsulation was asked to build a flow from zero packets."""


class EmptySeries(PairflowError):
    """A byte-rate series was requested for a flow with no data packets."""


class UnknownVariant(PairflowError):
    """Variant name outside {fqdn, planes, http, https}."""


class DegenerateData(PairflowError):
    """Training set contains fewer than two classes."""


class MaskMismatch(PairflowError):
    """Feature vectors disagree with the model's mode mask."""
