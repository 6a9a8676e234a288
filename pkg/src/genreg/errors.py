"""Exception taxonomy shared across the package.

Every error raised by library code derives from :class:`GenRegError`, so the
CLI can map any failure to a machine-readable JSON report. Subclasses also
inherit the closest builtin (ValueError / RuntimeError / OSError) to stay
friendly to generic exception handling.
"""


class GenRegError(Exception):
    """Base class for all library errors."""


class EmptyDataset(GenRegError, ValueError):
    """A dataset or target list was empty where data is required."""


class DegenerateVariance(GenRegError, ValueError):
    """All values identical: normalization or R^2 is undefined."""


class InvalidRange(GenRegError, ValueError):
    """A numeric range parameter is out of its admissible interval."""


class StepOutOfRange(GenRegError, ValueError):
    """Diffusion step index t outside the schedule's valid range."""


class OddDimension(GenRegError, ValueError):
    """Sinusoidal embedding dimension must be even."""


class DimensionMismatch(GenRegError, ValueError):
    """Input dimensions inconsistent with a configuration."""


class NonFiniteActivation(GenRegError, ArithmeticError):
    """A network forward pass produced NaN or Inf."""


class NonFiniteGradient(GenRegError, ArithmeticError):
    """A backward pass produced NaN or Inf."""


class NonFiniteUpdate(GenRegError, ArithmeticError):
    """An optimizer update produced NaN or Inf parameters."""


class DivergedTraining(GenRegError, RuntimeError):
    """Training loss became NaN or Inf."""


class DegenerateMixture(GenRegError, ValueError):
    """Gaussian mixture with nonpositive component variance or bad weights."""


class EmptyEnsemble(GenRegError, ValueError):
    """Posterior summary requested for an empty sample set."""


class LengthMismatch(GenRegError, ValueError):
    """Paired sequences have different lengths."""


class EmptySample(GenRegError, ValueError):
    """Distance requested between empty sample sets."""


class UnknownTask(GenRegError, KeyError):
    """Synthetic task name not recognized."""


class ConfigParse(GenRegError, ValueError):
    """Experiment configuration file is malformed."""


class DatasetNotFound(GenRegError, OSError):
    """Referenced dataset path does not exist."""


class CheckpointCorrupt(GenRegError, ValueError):
    """Checkpoint file failed schema, hash, or config validation."""
