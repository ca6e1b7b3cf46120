"""Exception hierarchy shared across the pipeline."""


class IpsLabelError(Exception):
    """Base class for all ipslabel errors."""


class ConfigError(IpsLabelError):
    """Bad or inconsistent configuration input."""


# --- geometry ---------------------------------------------------------------

class DegenerateBeaconPair(IpsLabelError):
    """Beacons coincide in the xy-plane; heading is undefined."""


class FrameMismatch(IpsLabelError):
    """Transform frames do not chain."""


class EmptyReadings(IpsLabelError):
    """No beacon readings to average."""


# --- camera / calibration ---------------------------------------------------

class BehindCamera(IpsLabelError):
    """Point has non-positive depth in the camera frame."""


class MissingPlaneTag(IpsLabelError):
    """Correspondence lacks a plane tag while the planar constraint is on."""


class DegenerateConfiguration(IpsLabelError):
    """Point configuration leaves the pose underdetermined."""


class NoConvergence(IpsLabelError):
    """Pose refinement failed numerically."""


class TooFewInliers(IpsLabelError):
    """RANSAC consensus too small to refit a pose."""


class EmptySubset(IpsLabelError):
    """RMSE requested over an empty index set."""


# --- label generation -------------------------------------------------------

class AllVerticesBehindCamera(IpsLabelError):
    """Every box vertex projects behind the camera."""


# --- refinement -------------------------------------------------------------

class TooFewPoints(IpsLabelError):
    """Not enough points for the requested fit."""


class NoPlaneFound(IpsLabelError):
    """Plane RANSAC never reached the minimum inlier ratio."""


class EmptyNeighborhood(IpsLabelError):
    """No points survive cropping around the unrefined label."""


class DegenerateSample(IpsLabelError):
    """Sampled points cannot form a box proposal."""


class AllProposalsDegenerate(IpsLabelError):
    """Every RANSAC iteration produced a degenerate proposal."""


# --- evaluation / IO --------------------------------------------------------

class MissingSample(IpsLabelError):
    """Sample ids do not match between label directories."""


class ClassMismatch(IpsLabelError):
    """Labelled object classes cannot be paired."""
