"""Virtual-coupling phononic processor toolkit.

Modules: ``device`` (configuration types), ``coupling`` (engineered rates in
the Stark-shifted frame), ``spectrum`` (mode spectra, drive planning and
collision audits), ``fidelity`` (gate and processor-scale error models),
``oracle`` (rates fitted from time-domain dynamics), ``fock`` (sparse Fock
simulator), ``qram`` (bucket-brigade queries) and ``cli``.
"""

from .device import ConfigError, DeviceConfig, DriveTone, load_config
from .fock import GateSpec, NoiseChannel, SparseFockState
from .qram import Database, build_tree, schedule_query

__all__ = ["ConfigError", "DeviceConfig", "DriveTone", "load_config", "GateSpec", "NoiseChannel",
           "SparseFockState", "Database", "build_tree", "schedule_query"]
__version__ = "0.1.0"
