"""Point-cloud semantic segmentation with slice pooling and bidirectional RNNs, in numpy.

Slice pooling/unpooling kernels use numba when available; set
``RSNET_NUMBA=0`` to force the pure-numpy path.
"""
from .config import RunConfig
from .errors import RSNetError
from .model import RSNetConfig, build_rsnet, rsnet_backward, rsnet_forward
from .pcio import LabeledCloud, SceneSpec, generate_scene, read_cloud, scene_series, write_cloud

__version__ = "0.1.0"

__all__ = [
    "LabeledCloud",
    "RSNetConfig",
    "RSNetError",
    "RunConfig",
    "SceneSpec",
    "build_rsnet",
    "generate_scene",
    "read_cloud",
    "rsnet_backward",
    "rsnet_forward",
    "scene_series",
    "write_cloud",
]
