"""Photometric stereo from event-camera interval profiles."""
from .core_types import (Event, EventStream, LightTrajectory, PixelThresholds, Profile,
                         SurfaceNormal, TemporalMask)
from .errors import EIPError

__all__ = ["Event", "EventStream", "LightTrajectory", "PixelThresholds", "Profile",
           "SurfaceNormal", "TemporalMask", "EIPError"]
