"""
Segment reductions over labelled rows.
A layout sorts rows by label once so every reduction is a reduceat.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SegmentLayout:
    """Rows grouped by label; every label in [0, n_segments) must occur"""
    labels: np.ndarray
    order: np.ndarray
    starts: np.ndarray
    n_segments: int

    @classmethod
    def from_labels(cls, labels, n_segments: int) -> "SegmentLayout":
        labels = np.asarray(labels, dtype=np.int64)
        order = np.argsort(labels, kind="stable")
        counts = np.bincount(labels, minlength=n_segments)
        if len(counts) > n_segments or (counts == 0).any():
            raise ValueError("every segment needs at least one row")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        return cls(labels=labels, order=order, starts=starts, n_segments=n_segments)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(np.append(self.starts, len(self.labels)))


def segment_max(values: np.ndarray, layout: SegmentLayout) -> np.ndarray:
    """Componentwise max of the rows in each segment"""
    return np.maximum.reduceat(values[layout.order], layout.starts, axis=0)


def segment_argmax(values: np.ndarray, layout: SegmentLayout, out: np.ndarray) -> np.ndarray:
    """
    Row index of the first maximizer per (segment, column), given the
    segment max `out`. Ties go to the lowest position in sorted order.
    """
    ordered = values[layout.order]
    hit = ordered == out[layout.labels[layout.order]]
    positions = np.arange(len(ordered))[:, None] if ordered.ndim == 2 else np.arange(len(ordered))
    candidate = np.where(hit, positions, len(ordered))
    first = np.minimum.reduceat(candidate, layout.starts, axis=0)
    return layout.order[first]
