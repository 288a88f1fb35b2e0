"""
Mimic Explorer - learns human interaction patterns from UI traces and uses
them to prioritize inputs while exploring apps
"""

__version__ = "0.3.0"
__description__ = "Interaction-pattern guided GUI exploration with a synthetic app simulator"


def main(argv=None) -> int:
    """Command line entry point."""
    from .app import main as _main
    return _main(argv)


__all__ = [
    "__version__",
    "main",
]
