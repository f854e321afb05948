"""Exception types shared across the package.

Split into three families so the CLI can map failures to exit codes
without inspecting messages: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class HoidiffError(Exception):
    """Base class for all package errors."""


class UsageError(HoidiffError):
    """Bad arguments, bad config, unsupported combinations."""


class DataError(HoidiffError):
    """Malformed or missing input data."""


class NumericError(HoidiffError):
    """Numerical failure (degeneracy, non-convergence, NaN)."""


# ---------------------------------------------------------------- rotations

class DegenerateRotation(NumericError):
    """6D rotation input collapses under orthonormalization."""


class InvalidRotation(DataError):
    """Matrix is not a proper rotation."""


# ----------------------------------------------------------------- meshes

class InvalidTopology(DataError):
    """Triangle indices out of range, duplicated, or degenerate."""


class NotWatertight(DataError):
    """Mesh has boundary or non-manifold edges."""


class EmptyMesh(DataError):
    """Mesh with no vertices or no triangles."""


class InvalidPitch(UsageError):
    """Non-positive voxel or grid pitch."""


# ------------------------------------------------------------- trajectories

class MissingRightHand(DataError):
    """Trajectory layout lacks the right hand required for anchoring."""


class SizeMismatch(DataError):
    """Flat vector length inconsistent with the declared layout."""


class InvalidLayout(DataError):
    """Unsupported hand set or object part count."""


# ---------------------------------------------------------------- features

class EmptyText(DataError):
    """Text input with no tokens after normalization."""


class InvalidDescriptor(DataError):
    """Scene descriptor with wrong arity or non-finite entries."""


class DimensionMismatch(DataError):
    """Feature vector length differs from the configured dimension."""


class EmptyDatabase(DataError):
    """Retrieval database with no entries."""


# ----------------------------------------------------------------- network

class OutOfRange(UsageError):
    """Timestep or index outside the valid range."""


class NoRecordedForward(UsageError):
    """backward() called before any forward pass was recorded."""


class ShapeMismatch(DataError):
    """Array shape incompatible with the network configuration."""


# --------------------------------------------------------------- diffusion

class InvalidRange(UsageError):
    """Invalid schedule parameters (T < 1, beta out of (0, 1), ...)."""


class GuidanceWithoutMesh(UsageError):
    """Steering requested but no mesh supplied."""


# ----------------------------------------------------------------- metrics

class InsufficientData(DataError):
    """Too few samples to estimate the statistic."""


class EmptySet(DataError):
    """Empty sample set where at least one element is required."""


class NonPSD(NumericError):
    """Covariance matrix irreparably non positive semi-definite."""


# ------------------------------------------------------------------- pipeline

class InvalidConfig(UsageError):
    """Config file malformed or containing unknown/invalid values."""


class DatasetMissing(DataError):
    """Dataset directory or index file not found."""


class ConfigHashMismatch(DataError):
    """Artifact was produced under a different configuration."""
