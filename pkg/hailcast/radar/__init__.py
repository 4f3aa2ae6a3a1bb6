"""
Synthetic radar module.

Simulator of advected storm cells plus the windowed dataset layout.
"""

from hailcast.radar.dataset import (
    DatasetSplit,
    RadarDataset,
    Window,
    build_dataset,
    extract_windows,
    split_dataset,
)
from hailcast.radar.simulator import (
    RadarSequence,
    StormCell,
    generate_sequence,
)

__all__ = [
    "DatasetSplit",
    "RadarDataset",
    "RadarSequence",
    "StormCell",
    "Window",
    "build_dataset",
    "extract_windows",
    "generate_sequence",
    "split_dataset",
]
