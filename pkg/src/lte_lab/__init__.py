"""Local thermodynamic equilibrium at three levels on exactly solvable models.

Submodules: ``thermo_core`` (Legendre duality), ``models`` (model catalogue),
``quantum_stat`` (finite-volume Gibbs/KMS), ``hydro`` (conservation laws),
``fluctuations`` (Gaussian fields), ``zeroth_law`` (probe thermalization),
``pipeline``/``cli``/``verify`` (composition and tooling).
"""
from . import fluctuations, hydro, models, quantum_stat, thermo_core, zeroth_law
from .errors import ConfigError, LTEError
from .models import CATALOG, make_model

__version__ = "0.1.0"

__all__ = ["thermo_core", "models", "quantum_stat", "hydro", "fluctuations", "zeroth_law",
           "CATALOG", "make_model", "LTEError", "ConfigError", "__version__"]
