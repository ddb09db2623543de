"""Pressure-robust enriched Galerkin solver for steady incompressible
Navier-Stokes equations in rotational form."""

__version__ = "0.1.0"
