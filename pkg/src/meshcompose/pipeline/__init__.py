from .scene import ComposedScene, ObjectEntry, PlacedObject, RefinementSettings, SceneParams, SceneSpec
from .synthetic import KINDS, generate_synthetic_case

__all__ = [
    "ComposedScene",
    "KINDS",
    "ObjectEntry",
    "PlacedObject",
    "RefinementSettings",
    "SceneParams",
    "SceneSpec",
    "generate_synthetic_case",
]
