"""Domain error hierarchy.

Every failure mode that callers are expected to handle gets its own
exception class; the CLI maps any ``GnssFilterError`` to exit code 1.
"""


class GnssFilterError(Exception):
    """Base class for all domain errors raised by this package."""


# --- frames ---------------------------------------------------------------

class NearSingularity(GnssFilterError):
    """Geometry too close to a coordinate singularity to be meaningful."""


# --- measurement models ---------------------------------------------------

class MissingCorrection(GnssFilterError):
    """A correction model is disabled and the observation carries no value."""


# --- dataset ingest -------------------------------------------------------

class FormatError(GnssFilterError):
    """Malformed dataset line."""

    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class VersionError(GnssFilterError):
    """Unsupported dataset format version."""


class OrderError(GnssFilterError):
    """Epoch timestamps not strictly increasing."""


class EmptySplit(GnssFilterError):
    """A requested dataset split would receive zero epochs."""


# --- coarse positioning ---------------------------------------------------

class TooFewSatellites(GnssFilterError):
    """Not enough satellites remain to solve the epoch."""


class RankDeficient(GnssFilterError):
    """Normal matrix numerically rank deficient; geometry unusable."""


# --- feature extraction ---------------------------------------------------

class SingularGeometry(GnssFilterError):
    """DOP design matrix is numerically singular."""


# --- autodiff tape --------------------------------------------------------

class GraphCycle(GnssFilterError):
    """Cycle detected in the recorded computation graph (programming error)."""


class NonScalarSeed(GnssFilterError):
    """backward() called on a non-scalar value."""


# --- filter ---------------------------------------------------------------

class GapTooLarge(GnssFilterError):
    """Time gap between epochs exceeds the re-initialization threshold."""

    def __init__(self, dt):
        super().__init__(f"epoch gap {dt:.3f} s exceeds limit; re-initialize from coarse")
        self.dt = dt


class SingularS(GnssFilterError):
    """Innovation covariance numerically singular; epoch must be skipped."""


class NotSPD(GnssFilterError):
    """Matrix expected to be symmetric positive definite is not."""


# --- training -------------------------------------------------------------

class NoGroundTruth(GnssFilterError):
    """Training requested on epochs without ground truth."""


class DivergedLoss(GnssFilterError):
    """Loss became non-finite during training."""


# --- simulator / evaluation / config --------------------------------------

class ConfigError(GnssFilterError):
    """Invalid or inconsistent configuration."""


class LengthMismatch(GnssFilterError):
    """Aligned sequences have different lengths."""


class NoValidEpochs(GnssFilterError):
    """No epoch produced a usable solution."""
