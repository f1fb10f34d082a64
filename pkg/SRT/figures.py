import logging

from pathlib import Path
from typing import Union

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from numpy.typing import ArrayLike

from .metrics import channel_norms, histogram_of, weight_histogram
from .models import Model
from .srt_types import Histogram

logger = logging.getLogger(__name__)

DEFAULT_SPAN = (-0.5, 0.5)

# fixed id salt and no timestamp keep the SVG bytes stable
SVG_RC = {"svg.hashsalt": "srt-histogram", "svg.fonttype": "path"}

def bin_edges(bins: Union[int, ArrayLike], span: tuple[float, float] = DEFAULT_SPAN) -> np.ndarray:
    if np.ndim(bins) == 0:
        return np.linspace(span[0], span[1], int(bins) + 1)  # type: ignore[arg-type]
    return np.asarray(bins, dtype=np.float64)

def _write_svg(histogram: Histogram, path: Union[str, Path], title: str, xlabel: str) -> None:
    edges = histogram.edges

    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=(6.0, 4.0))
        ax = figure.add_subplot()
        ax.bar(edges[:-1], histogram.counts, width=np.diff(edges), align="edge", color="tab:blue", edgecolor="none")
        ax.set_xlim(edges[0], edges[-1])
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        ax.set_title(title)
        figure.savefig(path, format="svg", metadata={"Date": None})

    logger.debug("histogram of %d values (%d outside the bins) written to %s", histogram.total, histogram.outside, path)

def emit_histogram_svg(model: Model, path: Union[str, Path], bins: Union[int, ArrayLike] = 100) -> Histogram:
    histogram = weight_histogram(model, bin_edges(bins))
    _write_svg(histogram, path, f"weights ({histogram.total})", "weight value")
    return histogram

def emit_channel_histogram_svg(model: Model, path: Union[str, Path], bins: Union[int, ArrayLike] = 50) -> Histogram:
    norms = channel_norms(model)
    top = float(norms.max()) if norms.size and norms.max() > 0 else 1.0
    histogram = histogram_of(norms, bin_edges(bins, (0.0, top * (1 + 1e-9))))
    _write_svg(histogram, path, f"channel norms ({histogram.total})", "channel l2 norm")
    return histogram
