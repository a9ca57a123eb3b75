"""Plain-text and CSV writers for DiD results."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from ..panel import write_frame
from .aggregate import AggregatedEffect
from .attgt import AttGtCollection


def write_att_gt(collection: AttGtCollection, se: Optional[np.ndarray], path, manifest=None) -> pd.DataFrame:
    frame = collection.to_frame(se)
    write_frame(frame, path, manifest)
    return frame


def write_event_study(study: AggregatedEffect, path, manifest=None, outcome: str = "") -> pd.DataFrame:
    frame = study.to_frame()
    if outcome:
        frame.insert(0, "outcome", outcome)
    write_frame(frame, path, manifest)
    return frame


def format_pretrend(study: AggregatedEffect, outcome: str = "") -> str:
    test = study.pretrend
    lines = []
    if outcome:
        lines.append(f"Outcome: {outcome}")
    lines.append(f"Pretrend Test: H0 All Pre-treatment are equal to 0   "
                 f"chi2({test['df']}) = {test['chi2']:.3f}   p-value = {test['pvalue']:.3f}")
    for name, label in (("pre_average", "Pre-average"), ("post_average", "Post-average")):
        row = study.summary[name]
        lines.append(f"{label}: {row['estimate']:.4f} ({row['se']:.4f})")
    return "\n".join(lines) + "\n"


def write_pretrend(studies, path, manifest=None) -> str:
    """``studies`` maps outcome names to event studies."""
    if isinstance(studies, AggregatedEffect):
        studies = {"": studies}
    text = "\n".join(format_pretrend(s, name) for name, s in studies.items())
    if manifest:
        text = f"# {manifest}\n" + text
    Path(path).write_text(text, encoding="utf-8")
    return text
