"""Progressive self-supervision with k-means++ pseudo-labels, plus an exact two-source PID calculator."""

from .pid import JointPMF, PIDResult, decompose

__version__ = "0.1.0"
__all__ = ["JointPMF", "PIDResult", "decompose", "__version__"]
