"""Exception types raised across the library."""


class AngioError(Exception):
    """Base class for all library errors."""


class DegenerateCropError(AngioError):
    """Crop box has zero width or height after clipping to the image."""


class EmptySkeletonError(AngioError):
    """Skeleton has no foreground pixels, so no path can be extracted."""


class DegenerateMaskError(AngioError):
    """Mask is empty or its centerline is too short for severity estimation."""


class EmptyMaskError(AngioError):
    """Operation requires a non-empty foreground."""


class DimensionMismatchError(AngioError):
    """Paired rasters do not share the same width and height."""


class ZeroGroundTruthError(AngioError):
    """Average precision is undefined without any ground-truth lesions."""


class UnknownImageIdError(AngioError):
    """Detection references an image id absent from the manifest."""


class MissingMldPointError(AngioError):
    """MLD-based matching needs an MLD point on every ground-truth lesion."""


class UndefinedMetricError(AngioError):
    """A metric denominator is zero (or a rate has no support)."""


class EmptySampleError(AngioError):
    """Statistical test received an empty sample."""


class LengthMismatchError(AngioError):
    """Paired measurement lists differ in length."""


class InvalidTierError(AngioError):
    """Requested augmentation tier combination violates the pyramid."""


class SchemaError(AngioError):
    """Input file does not conform to the documented JSON/CSV schema."""
