"""Non-uniform temporal aggregation for video features.

Numpy-facing bindings over the C++ core: head-split projection ops, the
aggregation module, the two-branch classifier and the analytic cost walk.
"""

from nuta._core import (
    Module,
    Network,
    conv3d,
    count_flops,
    gamma,
    gamma_inverse,
    matmul,
    softmax,
    temporal_maxpool2,
)

__all__ = [
    "Module",
    "Network",
    "conv3d",
    "count_flops",
    "gamma",
    "gamma_inverse",
    "matmul",
    "softmax",
    "temporal_maxpool2",
]
