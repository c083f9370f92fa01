"""Group-wise fully quantized Winograd convolution with learnable transform scales."""

import os

# the bundled TBB is older than numba wants; OpenMP gives the same parallel loops
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .errors import (  # noqa: E402
    ComputeError, FormatError, InvalidScale, InvalidShape, InvalidSpec,
    SingularTransform, TuneDiverged, UndefinedMetric, WinoqError,
)
from .tensor import RngSpec, Tensor, tensor_load, tensor_new, tensor_save  # noqa: E402
from .transforms import (  # noqa: E402
    ScaleSet, WinogradTransform, build_transform, load_scales, rescale_transform,
    standard_scales, standard_transform,
)
from .quantizer import GroupQuantized, GroupSpec, dequantize, quantize_tensor, sqnr  # noqa: E402
from .conv_ref import ConvShape, DirectQ8Conv, conv_direct_fp, conv_direct_q8  # noqa: E402
from .wino_engine import WinoQ8Conv, tap_range_stats, wino_conv  # noqa: E402

__version__ = "0.1.0"
