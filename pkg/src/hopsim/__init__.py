"""Signal-level simulator for decentralized frequency-hopping FMCW radars.

Modules:
  game     anti-coordination game types, equilibrium solvers, regret metrics
  hopping  per-radar subband schedulers (uniform, explore-then-commit, no-regret)
  signal   chirp synthesis, interference, SINR estimation, fine-range recovery
  sim      multi-radar scenario orchestration
  cli      command-line runner and report generator
"""

from . import cli, game, hopping, signal, sim

__all__ = ["cli", "game", "hopping", "signal", "sim"]
__version__ = "0.1.0"
