"""Exception types shared across the package."""


class TutorfxError(Exception):
    """Base class for all library errors."""


class MalformedRecord(TutorfxError):
    """An input row violates the event schema."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class DuplicateEvent(TutorfxError):
    """Same (student, timestamp, problem) seen twice with conflicting correctness."""


class InvalidConfig(TutorfxError):
    """A configuration value violates its declared invariant."""


class EmptySelection(TutorfxError):
    """A unit filter matched nothing."""


class EmptyTreatmentSample(TutorfxError):
    """No tutored attempt survived sample construction."""


class DegenerateSplit(TutorfxError):
    """Holdout or control pool came out empty."""


class NonFiniteLoss(TutorfxError):
    """Training loss diverged to NaN or infinity."""


class DegenerateLabels(TutorfxError):
    """AUC is undefined: evaluation labels are all-positive or all-negative."""


class NoOobCoverage(TutorfxError):
    """A unit's cluster was inside every tree's subsample."""


class InsufficientVariation(TutorfxError):
    """Residualized treatment carries no variation at the forest root."""


class LengthMismatch(TutorfxError):
    """Aligned vectors have different lengths."""


class PropensityOutOfRange(TutorfxError):
    """A propensity estimate is outside (0, 1)."""


class NoTreatedUnits(TutorfxError):
    """ATT requested on a sample without treated units."""


class ZeroVariance(TutorfxError):
    """Correlation is undefined: one input is constant."""


class RankDeficientDesign(TutorfxError):
    """Moderator design matrix is not full rank."""


class InsufficientPlaceboCoverage(TutorfxError):
    """Too few rows carry a placebo outcome."""


class EmptyAfterTrim(TutorfxError):
    """Propensity trimming removed every unit."""


class MissingContext(TutorfxError):
    """External-covariate variant requested without student context data."""


class MissingUpstreamArtifact(TutorfxError):
    """A stage command cannot find the artifact a previous stage writes."""
