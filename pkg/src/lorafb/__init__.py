"""Frequency-bias toolkit for LoRa: synthesis, collisions, estimation and replay detection."""

from __future__ import annotations

__version__ = "0.1.0"

from .attack import (
    AttackGeometry,
    CollisionWindows,
    GridSpec,
    NotInTable,
    collision_grid,
    lookup_collision_windows,
    vulnerable_area,
)
from .channel import CollisionScene, GroundTruth, PathLossParams, add_awgn, compose_collision
from .detect import Decision, EnrollmentRequired, FbDatabase, Verdict, check_frame, enroll
from .fbest import FbEstimate, LsqConfig, fb_least_squares, fb_linear_regression
from .receiver import NoFrame, OnsetResult, OutcomeClass, aic_onset, coarse_fb, receive_frames, sfd_onset
from .signal import ChirpSpec, FrameSpec, IqTrace, PhyConfig, synthesize_frame

__all__ = [
    "AttackGeometry", "ChirpSpec", "CollisionScene", "CollisionWindows", "Decision",
    "EnrollmentRequired", "FbDatabase", "FbEstimate", "FrameSpec", "GridSpec", "GroundTruth",
    "IqTrace", "LsqConfig", "NoFrame", "NotInTable", "OnsetResult", "OutcomeClass",
    "PathLossParams", "PhyConfig", "Verdict", "__version__", "add_awgn", "aic_onset",
    "check_frame", "coarse_fb", "collision_grid", "compose_collision", "enroll",
    "fb_least_squares", "fb_linear_regression", "lookup_collision_windows", "receive_frames",
    "sfd_onset", "synthesize_frame", "vulnerable_area",
]
