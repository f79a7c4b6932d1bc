"""modsizer: TCO-optimal shared powertrain modules for an EV family."""

__version__ = "0.1.0"

from .cycle import DriveCycle, load_builtin, load_cycle, resample  # noqa: F401
from .family import FamilyArchitecture, load_family, validate  # noqa: F401
