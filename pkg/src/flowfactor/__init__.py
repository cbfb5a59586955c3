"""flowfactor: factor near-identity torus diffeomorphisms into flows of rescaled fields."""

__version__ = "0.1.0"
