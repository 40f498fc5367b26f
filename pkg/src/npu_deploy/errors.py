"""Exception hierarchy shared across the toolkit."""


class NpuDeployError(Exception):
    """Base class for all toolkit errors."""


class ParseError(NpuDeployError):
    """Manifest or config file is syntactically malformed."""


class ValidationError(NpuDeployError):
    """Parsed data violates a structural invariant."""


class IoError(NpuDeployError):
    """File could not be read or written."""


class EmptySelection(NpuDeployError):
    """No candidate network fits the processor budgets."""

    def __init__(self, reasons):
        self.reasons = list(reasons)
        super().__init__(
            "no compatible candidate: " + "; ".join(self.reasons)
        )


class MappingError(NpuDeployError):
    """Model cannot be mapped (incompatible with the chip)."""


class InternalError(NpuDeployError):
    """Invariant broken by construction; indicates a bug."""


class EncodingError(NpuDeployError):
    """Input value outside the declared bit range."""


class MissingWeights(NpuDeployError):
    """Simulation requested on a model without weight blobs."""


class ShapeMismatch(NpuDeployError):
    """Tensor or frame shape does not match the model."""


class HeadIncompatible(NpuDeployError):
    """Last layer cannot be replaced by a learnable head."""


class SlotsExhausted(NpuDeployError):
    """All neuron slots for a class are assigned and none matches."""


class DimensionMismatch(NpuDeployError):
    """Vector length does not match the head's input width."""


class MissingCostModel(NpuDeployError):
    """Processor config carries no cost model coefficients."""


class NonPositiveLatency(NpuDeployError):
    """Latency must be > 0 for throughput conversion."""


class NonPositivePower(NpuDeployError):
    """Power must be > 0 for efficiency computation."""
