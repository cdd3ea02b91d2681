from bgdepth.metrics.depth import log10_error, rmse  # noqa: F401
from bgdepth.metrics.edges import derm, sobel_magnitude  # noqa: F401
from bgdepth.metrics.report import MetricReport, compute_report, render_tsv  # noqa: F401
from bgdepth.metrics.ssim import mssim  # noqa: F401
