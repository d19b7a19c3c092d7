class ExportError(Exception):
    """Invalid inputs or configuration (CLI exit code 2)."""


class PairingError(ExportError):
    """Video/caption id mismatch that would silently corrupt a corpus."""
