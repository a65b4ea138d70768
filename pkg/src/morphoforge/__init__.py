"""morphoforge: text-to-robot design synthesis with replayable VLM feedback."""

from .errors import MorphoforgeError
from .model import (
    BodyNode,
    Box,
    Capsule,
    Ellipsoid,
    GeomSpec,
    Hinge,
    Ball,
    Free,
    Fixed,
    InvalidTree,
    KinematicTree,
    Orientation,
    Rgba,
    SymmetryTag,
    Vec3,
    body_dimensions,
)

__version__ = "0.1.0"

__all__ = [
    "MorphoforgeError",
    "BodyNode",
    "Box",
    "Capsule",
    "Ellipsoid",
    "GeomSpec",
    "Hinge",
    "Ball",
    "Free",
    "Fixed",
    "InvalidTree",
    "KinematicTree",
    "Orientation",
    "Rgba",
    "SymmetryTag",
    "Vec3",
    "body_dimensions",
    "__version__",
]
