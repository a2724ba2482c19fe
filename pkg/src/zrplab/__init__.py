"""zrplab: a numerical laboratory for the zero range process.

Layers, cross-validated against one another at desk scale:

- jump_rates / thermo: microscopic model and its grand canonical functions
- kmc: exact event-driven simulation on the discrete torus
- pde: the hydrodynamic limit d_t rho = Lap Phi(rho)
- metric: weighted elliptic solvers, H^{+-1}_w products, the thermodynamic
  metric tensor and the Onsager operator
- action: path rate functionals and the proximal (JKO) scheme
- fluct: fluctuation fields, variance checks, martingale residuals
- cli: experiment runner writing CSV/JSON artifacts (entry point zrp-hydro)
"""

from .errors import ConvergenceError, OutOfDomainError, SaturationError
from .jump_rates import (
    JumpRateSpec,
    SuperlinearityCertificate,
    critical_fugacity,
    evaluate,
    log_factorial_product,
    superlinearity_certificate,
)
from .thermo import Ensemble, ThermoValue, hyp2f1, polylog

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "OutOfDomainError",
    "SaturationError",
    "JumpRateSpec",
    "SuperlinearityCertificate",
    "critical_fugacity",
    "evaluate",
    "log_factorial_product",
    "superlinearity_certificate",
    "Ensemble",
    "ThermoValue",
    "hyp2f1",
    "polylog",
    "__version__",
]
