"""Test fixtures: factories and brute-force oracles."""

from enum import Enum


class Stack(tuple, Enum):
    """Stage lists used across the pipeline tests."""

    BASELINE = ("normalize", "rank", "evaluate")
    POSTPROCESSING = (
        "normalize",
        "camera_subtract",
        "rerank",
        "tracklet",
        "camera_verify",
        "rank",
        "evaluate",
    )
    FULL = (
        "normalize",
        "average_views",
        "ensemble",
        "camera_subtract",
        "fuse_eq4",
        "rerank",
        "tracklet",
        "camera_verify",
        "rank",
        "evaluate",
    )
