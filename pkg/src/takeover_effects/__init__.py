"""Firm-level markups and the effects of takeovers on firm outcomes."""

__version__ = "0.1.0"
