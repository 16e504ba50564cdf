"""polyseq: parallel vs auto-regressive transformer decoding on polygon toys.

A desk-scale laboratory for set prediction on synthetic geometric scenes:
seeded dataset generators, a small autodiff tensor core, DETR-style parallel
decoding with Hungarian matching, an auto-regressive token decoder, and the
matching evaluation metrics (IoU-threshold and L1-threshold mAP).
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as kernel_backend  # noqa: F401
