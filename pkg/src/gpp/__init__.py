"""Ground plane polling for monocular 3D boxes of objects on the road."""

from .encoding import Dimensions3D, OrientationClass
from .geometry import Cuboid3D, Plane, ProjectionMatrix, Ray
from .planes import PlaneDatabase, RansacConfig
from .solver import Detection, PollResult, poll, poll_batch

__all__ = [
    "Cuboid3D",
    "Detection",
    "Dimensions3D",
    "OrientationClass",
    "Plane",
    "PlaneDatabase",
    "PollResult",
    "ProjectionMatrix",
    "RansacConfig",
    "Ray",
    "poll",
    "poll_batch",
]
