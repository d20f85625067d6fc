"""Adversarial attacks on neural power-allocation models for multicell
massive-MIMO downlinks: scenario synthesis, max-prod ground truth, dense
regression networks, and the a1..a9 attack benchmark."""

__version__ = "0.1.0"

from . import attacks, cli, evaluation, linalg, maxprod, nnet, scenario  # noqa: F401
