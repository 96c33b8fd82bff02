"""Two-phase elliptic transmission solvers on flat, bent and circular interfaces."""

__version__ = "0.1.0"
