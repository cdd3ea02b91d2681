from typing import Iterable, List, Sequence

import numpy as np
from pydantic import BaseModel, Field

from bgdepth.imaging.convert import depth_visualization
from bgdepth.imaging.types import DepthMap
from bgdepth.metrics.depth import joint_valid, log10_error, rmse
from bgdepth.metrics.edges import derm
from bgdepth.metrics.ssim import mssim

# lower is better for errors, higher for similarity scores
COLUMNS = (("rmse", "rmse↓"), ("log10_err", "log10↓"), ("mssim", "mssim↑"), ("derm", "derm↑"))


class MetricReport(BaseModel):
    sample_id: str = ""
    rmse: float = Field(ge=0.0)
    log10_err: float = Field(ge=0.0)
    mssim: float = Field(ge=-1.0, le=1.0)
    derm: float = Field(ge=0.0, le=1.0)
    n_valid: int = Field(0, ge=0)

    @classmethod
    def tsv_header(cls, label: str = "id") -> str:
        return "\t".join([label] + [title for _, title in COLUMNS] + ["n_valid"])

    def to_tsv(self) -> str:
        values = [f"{getattr(self, name):.6f}" for name, _ in COLUMNS]
        return "\t".join([self.sample_id] + values + [str(self.n_valid)])

    def to_keyvalue(self) -> str:
        lines = [f"id={self.sample_id}"] if self.sample_id else []
        lines += [f"{name}={getattr(self, name):.6f}" for name, _ in COLUMNS]
        lines.append(f"n_valid={self.n_valid}")
        return "\n".join(lines)

    @classmethod
    def mean(cls, reports: Sequence["MetricReport"], sample_id: str = "mean") -> "MetricReport":
        if not reports:
            raise ValueError("Cannot average an empty list of reports")
        averaged = {name: float(np.mean([getattr(r, name) for r in reports])) for name, _ in COLUMNS}
        return cls(sample_id=sample_id, n_valid=sum(r.n_valid for r in reports), **averaged)


def compute_report(gt: DepthMap, pred: DepthMap, sample_id: str = "") -> MetricReport:
    """All four metrics for one prediction; mSSIM compares grayscale visualizations."""
    mask = joint_valid(gt, pred)
    return MetricReport(
        sample_id=sample_id,
        rmse=rmse(gt, pred),
        log10_err=log10_error(gt, pred),
        mssim=mssim(depth_visualization(gt), depth_visualization(pred)),
        derm=derm(gt, pred),
        n_valid=int(mask.sum()),
    )


def render_tsv(reports: Iterable[MetricReport], label: str = "id") -> str:
    rows: List[str] = [MetricReport.tsv_header(label)]
    rows += [report.to_tsv() for report in reports]
    return "\n".join(rows) + "\n"
