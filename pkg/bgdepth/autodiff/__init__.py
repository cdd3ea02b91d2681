from bgdepth.autodiff.conv import (  # noqa: F401
    conv2d,
    conv3d,
    conv_transpose2d,
    conv_transpose3d,
    maxpool2d,
    maxpool3d,
)
from bgdepth.autodiff.norm import BatchNormState, batchnorm2d, batchnorm3d  # noqa: F401
from bgdepth.autodiff.ops import (  # noqa: F401
    add,
    concat,
    lincomb_channels,
    mse,
    relu,
    reshape,
    scale,
    sigmoid,
    split,
    sum,
    weighted_gather,
)
from bgdepth.autodiff.tensor import Param, Tape, Tensor, active_tape, backward  # noqa: F401
