"""Self-tuning cooperative control of two arms holding a common object.

Online estimation of the grasp displacement and rotation between the two
end-effectors, a singularity-free inverse-dynamics controller built on those
estimates, Lyapunov-based margins, and a closed-loop simulator.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (
    CoopTuneError,
    IllConditioned,
    InfeasibleBounds,
    InvalidConfig,
    MalformedLog,
    NearSingularJacobian,
    NonPositiveSigma,
    NotHurwitz,
    NotSymmetric,
    RepresentationSingularity,
    SingularL,
)
from .rigidmotion import KinematicParams, Twist, UnitQuaternion

__all__ = [
    "CoopTuneError",
    "IllConditioned",
    "InfeasibleBounds",
    "InvalidConfig",
    "KinematicParams",
    "MalformedLog",
    "NearSingularJacobian",
    "NonPositiveSigma",
    "NotHurwitz",
    "NotSymmetric",
    "RepresentationSingularity",
    "SingularL",
    "Twist",
    "UnitQuaternion",
    "__version__",
]
