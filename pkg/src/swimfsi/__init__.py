"""Finite element simulation of a self-propelled deformable body in a viscous incompressible fluid."""

from importlib import import_module

__version__ = "0.1.0"

# numpy-heavy modules load on first use so that the CLI can set thread counts first
_LAZY = {
    "SimConfig": "config",
    "load_config": "config",
    "parse_config": "config",
    "Simulation": "stepper",
    "run_simulation": "stepper",
    "SwimFSIError": "errors",
}
__all__ = sorted(_LAZY)


def __getattr__(name):
    if name in _LAZY:
        return getattr(import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
