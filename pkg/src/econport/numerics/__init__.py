from .eig import AsymmetricMatrixError, eig_sym
from .newton import NewtonError, newton_solve
from .ode import Event, IntegrationError, IntegratorConfig, Trajectory, integrate

__all__ = [
    "AsymmetricMatrixError",
    "eig_sym",
    "Event",
    "IntegrationError",
    "IntegratorConfig",
    "Trajectory",
    "integrate",
    "NewtonError",
    "newton_solve",
]
