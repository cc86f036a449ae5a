"""Level-set shape optimization with Hamiltonian boundary tracing and
fictitious-domain penalization."""

__version__ = "0.1.0"
