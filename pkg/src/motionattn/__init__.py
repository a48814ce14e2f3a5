"""Multi-level motion attention for human motion prediction.

Attention over DCT-encoded motion history at pose/part/joint granularity
feeds a residual graph-convolutional predictor; the three levels can be
fused by a learned per-coordinate convex blend. Everything trains through
the package's own reverse-mode gradient engine (``motionattn.numerics``).
"""

from . import (
    dct_codec,
    evaluation,
    fusion,
    gcn_predictor,
    motion_attention,
    numerics,
    pose_data,
    training,
)

__version__ = "0.1.0"

__all__ = [
    "dct_codec",
    "evaluation",
    "fusion",
    "gcn_predictor",
    "motion_attention",
    "numerics",
    "pose_data",
    "training",
    "__version__",
]
