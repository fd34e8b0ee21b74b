"""Training targets derived from per-keypoint advisee errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .advisee import AdviseeRecord, RecordError
from .taxonomy import NUM_KEYPOINTS

UNITS = ("degrees", "radians")


@dataclass(frozen=True)
class LabelConfig:
    temperature: float = 10.0
    error_units: str = "degrees"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.error_units not in UNITS:
            raise ValueError(f"error_units must be one of {UNITS}")


def _convert(errors_deg: np.ndarray, units: str) -> np.ndarray:
    if units == "degrees":
        return errors_deg
    if units == "radians":
        return np.radians(errors_deg)
    raise ValueError(f"unknown units {units!r}")


def soft_label_from_errors(errors, visible, temperature: float) -> np.ndarray:
    """Temperature softmax of negated errors over ``visible``; exact 0 elsewhere."""
    errors = np.asarray(errors, dtype=float)
    visible = np.asarray(visible, dtype=int)
    if visible.size == 0:
        raise RecordError("cannot build a label without visible keypoints")
    z = -errors[visible] / temperature
    w = np.exp(z - z.max())
    label = np.zeros(errors.shape[0])
    label[visible] = w / w.sum()
    return label


def soft_label(record: AdviseeRecord, config: LabelConfig = LabelConfig()) -> np.ndarray:
    """34-vector structured label: best keypoints get the most mass."""
    if not record.errors:
        raise RecordError(f"record {record.instance_id} has no visible keypoints")
    errors = _convert(np.nan_to_num(record.error_vector()), config.error_units)
    return soft_label_from_errors(errors, record.visible, config.temperature)


def regression_targets(record: AdviseeRecord, units: str = "degrees") -> tuple[np.ndarray, np.ndarray]:
    """Per-keypoint error targets in ``units`` and the visibility mask."""
    mask = record.visible_mask()
    target = np.zeros(NUM_KEYPOINTS)
    target[mask] = _convert(record.error_vector()[mask], units)
    return target, mask
