from . import bellman, census, common, decompose, goodness, lattice, run, shift

__all__ = [
    "bellman",
    "census",
    "common",
    "decompose",
    "goodness",
    "lattice",
    "run",
    "shift",
]
