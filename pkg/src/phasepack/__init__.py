"""phasepack: overlap resolution for rigid 2D shape arrangements.

Evolves an anisotropic phase-field membrane around the shapes and projects
poses toward non-overlap and containment inside it.
"""

from .fields import Grid, ScalarField, TensorField
from .geometry import Pose, RigidShape, Scene
from .guidance import GuidanceConfig
from .orchestrator import Phase2Config, Phase2Result, load_scene, phase2_run
from .projection import ProjectionConfig
from .transport import CGConfig

__version__ = "0.1.0"

__all__ = [
    "Grid", "ScalarField", "TensorField", "Pose", "RigidShape", "Scene",
    "GuidanceConfig", "Phase2Config", "Phase2Result", "load_scene",
    "phase2_run", "ProjectionConfig", "CGConfig", "__version__",
]
