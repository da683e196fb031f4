"""Package-wide numerical tolerances.

``SETTINGS`` is the single mutable knob; the CLI's ``--tolerance`` flag
overrides ``validation_tol``.
"""

from dataclasses import dataclass


@dataclass
class Settings:
    solver_tol: float = 1e-8
    validation_tol: float = 1e-6
    pivot_tol: float = 1e-10
    feas_tol: float = 1e-9
    barrier_mu0: float = 1.0
    barrier_shrink: float = 0.2
    barrier_gap: float = 1e-9


SETTINGS = Settings()
