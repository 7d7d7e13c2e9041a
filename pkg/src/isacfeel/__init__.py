"""Over-the-air federated edge learning with integrated sensing.

Submodules: ``numerics`` (linear algebra helpers and RNG streams),
``channel`` (geometry and fading), ``sensing`` (target estimation and its
CRB), ``aggregation`` (zero-forcing OTA aggregation), ``scheduler``
(joint scheduling and beamforming), ``fedlearn`` (the learning loop) and
``harness`` (sweeps and CSV output).
"""

from .config import SystemConfig, TrainConfig, load_config
from .numerics import ValidationError, make_rng

__all__ = ["SystemConfig", "TrainConfig", "ValidationError", "load_config", "make_rng"]
__version__ = "0.1.0"
