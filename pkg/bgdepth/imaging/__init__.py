from bgdepth.imaging.convert import LUMA_WEIGHTS, as_gray, depth_visualization, to_gray  # noqa: F401
from bgdepth.imaging.netpbm import (  # noqa: F401
    load_depth,
    load_gray,
    load_image,
    save_depth,
    save_image,
)
from bgdepth.imaging.types import DepthMap, ImageGray, ImageRGB  # noqa: F401
