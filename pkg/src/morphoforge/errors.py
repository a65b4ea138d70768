"""Shared exception base for the morphoforge package.

Module-specific errors subclass MorphoforgeError so callers (notably the
CLI) can map failures to exit codes without importing every module.
"""


class MorphoforgeError(Exception):
    """Base class for all errors raised by morphoforge."""


class ConfigError(MorphoforgeError):
    """Invalid or incomplete configuration (bad flags, missing env vars)."""
