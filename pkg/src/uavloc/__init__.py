"""Planetary UAV localization: absolute map fixes fused with planar visual odometry."""

from uavloc.geometry import Pose6

__all__ = ["Pose6"]
__version__ = "0.1.0"
