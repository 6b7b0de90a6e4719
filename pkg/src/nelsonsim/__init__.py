"""Simulation toolkit for the classical and relativistic Nelson model.

Submodules:

- ``field_modes``: finite-mode boson field, exact OU sampling, pairings.
- ``particle_paths``: Brownian and (relativistic) Cauchy path samplers.
- ``operators``: discretised Hamiltonians, ground states, h-transform.
- ``feynman_kac``: Monte Carlo semigroup estimators and field oracle.
- ``pphi1``: CTMC realisation of the ground-state process.
- ``fclt``: martingale and functional CLT harness.
- ``oracles``: closed-form reference values.
- ``config`` / ``runner`` / ``cli``: experiment orchestration.
"""

__version__ = "0.1.0"
