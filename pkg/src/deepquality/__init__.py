"""No-reference image quality grading.

Pipeline: overlapping 64x64 luminance windows are ranked by variance, the
flattest are classified into five quality grades (c0 best .. c4 worst) by a
small convolutional network, and a linear classifier pools the per-patch
scores into an image-level grade.
"""

__version__ = "0.1.0"

from .grades import NUM_GRADES, QualityGrade

__all__ = ["NUM_GRADES", "QualityGrade", "__version__"]
