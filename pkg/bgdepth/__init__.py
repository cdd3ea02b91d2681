from bgdepth.__about__ import __version__  # noqa: F401
from bgdepth.config_utils import BGDepthConfig, get_config  # noqa: F401
